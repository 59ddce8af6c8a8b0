//! Soft-DTW converging to the exact alignment as the smoothing shrinks.

use instract::align::{hard_dtw_oracle, normalized_dtw_cost, soft_dtw};
use instract::tensor::Tensor;

fn main() -> instract::Result<()> {
    let cost = Tensor::from_rows(&[
        vec![0.1, 0.9, 1.2, 1.5],
        vec![0.8, 0.2, 1.1, 1.3],
        vec![1.4, 0.7, 0.3, 0.9],
        vec![1.6, 1.2, 0.8, 0.2],
        vec![1.9, 1.5, 1.0, 0.4],
    ])?;
    let hard = hard_dtw_oracle(&cost)?;
    println!("hard dtw {:.4} (enumerated {:?}) path {:?}", hard.cost, hard.enumerated, hard.path);
    for gamma in [1.0, 0.1, 0.01, 1e-3] {
        let r = soft_dtw(&cost, gamma)?;
        println!("gamma {gamma:<6} soft {:>8.4}  gap {:.2e}", r.soft_value, (r.soft_value - hard.cost).abs());
    }

    let occupancy = soft_dtw(&cost, 0.1)?.grad;
    println!("\nexpected path occupancy at gamma 0.1:");
    for i in 0..occupancy.rows() {
        let row: Vec<String> = occupancy.row(i).iter().map(|x| format!("{x:.2}")).collect();
        println!("  {}", row.join(" "));
    }

    let sim = Tensor::new(cost.shape(), cost.data().iter().map(|c| 1.0 - c).collect())?;
    println!("\nnormalized cost of the similarity 1 - C: {:.4}", normalized_dtw_cost(&sim)?);
    Ok(())
}
