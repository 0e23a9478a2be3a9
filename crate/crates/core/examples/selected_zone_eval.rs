// Full-image versus near-shore mIoU for a prediction whose shoreline sits
// eight rows too low.

use freespace::evaluation::{build_selected_zone, default_band_px, miou};
use freespace::tensor::Grid;

fn main() -> freespace::Result<()> {
    let (h, w) = (224, 224);
    let truth = Grid::from_fn(h, w, |y, _| u8::from(y >= 112));
    let pred = Grid::from_fn(h, w, |y, _| u8::from(y >= 120));
    let band = default_band_px(h);
    let zone = build_selected_zone(&truth, band)?;
    println!("band {band} px, zone covers {} of {} pixels", zone.mask.count_ones(), h * w);
    println!("miou full     {:.4}", miou(&pred, &truth, None)?);
    println!("miou selected {:.4}", miou(&pred, &truth, Some(&zone))?);
    Ok(())
}
