// Contour loss and the sampled shoreline distance on two parallel
// shorelines two rows apart.

use freespace::losses::{contour_loss, mask_contour_distance, ContourDistanceMode};
use freespace::tensor::Grid;

fn main() -> freespace::Result<()> {
    let n = 224;
    let truth = Grid::from_fn(n, n, |y, _| u8::from(y >= 100));
    let pred = Grid::from_fn(n, n, |y, _| u8::from(y >= 102));
    let p = Grid::from_fn(n, n, |y, x| pred.get(y, x) as f64);

    let loss = contour_loss(&p, &truth, 1.0)?;
    let diag = ((n * n + n * n) as f64).sqrt();
    println!("contour loss {loss:.6e}  (distance {:.3} px after undoing the diagonal)", loss * diag);
    let sampled = mask_contour_distance(&pred, &truth, 1000, 0, ContourDistanceMode::PredictionToTruth)?;
    println!("sampled distance {:.3} px", sampled.unwrap_or(f64::NAN));
    println!("identical masks: {:.1e}", contour_loss(&Grid::from_fn(n, n, |y, x| truth.get(y, x) as f64), &truth, 1.0)?);
    Ok(())
}
