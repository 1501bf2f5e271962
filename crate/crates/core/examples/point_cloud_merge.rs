// Merge two rigs' views of the benchmark lattice and watch the merge error
// grow with the anchor error.

use geomag_align::cloud::{benchmark_landmarks, merge_error, observe_landmarks, transform_cloud};
use geomag_align::{Result, Rotation, Vec3};

pub fn run() -> Result<Vec<f64>> {
    let lattice = benchmark_landmarks();
    let noise = 0.01;
    let pose_b = (Rotation::rot_z(0.6), Vec3::new(1.0, -0.4, 0.0));
    let a = observe_landmarks(&lattice, &Rotation::identity(), &Vec3::zeros(), noise, 1, "a", 0.0);
    let b = observe_landmarks(&lattice, &pose_b.0, &pose_b.1, noise, 2, "b", 0.0);
    let mut out = Vec::new();
    for cm in [0.0, 5.0, 10.0, 20.0] {
        let t = pose_b.1 + Vec3::new(cm / 100.0, 0.0, 0.0);
        let e = merge_error(&a, &transform_cloud(&b, &pose_b.0, &t))?;
        println!("anchor error {cm:>4} cm -> merge RMSE {:.1} mm", e.rmse * 1e3);
        out.push(e.rmse);
    }
    Ok(out)
}

fn main() -> Result<()> {
    run().map(|_| ())
}
