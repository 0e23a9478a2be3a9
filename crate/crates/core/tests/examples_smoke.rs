//! Runs the quick examples in-process.

macro_rules! example {
    ($name:ident, $file:literal) => {
        mod $name {
            include!($file);

            #[test]
            fn runs() {
                main().unwrap();
            }
        }
    };
}

example!(deformable_conv, "../examples/deformable_conv.rs");
example!(contour_loss, "../examples/contour_loss.rs");
example!(selected_zone_eval, "../examples/selected_zone_eval.rs");
example!(temporal_gate, "../examples/temporal_gate.rs");
example!(cross_attention, "../examples/cross_attention.rs");
example!(robustness_conditions, "../examples/robustness_conditions.rs");
example!(checkpoint, "../examples/checkpoint.rs");
