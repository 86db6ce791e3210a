use qmct::covest::{bootstrap_estimate, interval_estimate, kernel_estimate, KernelConfig};
use qmct::quantiles::{GroupedSample, ProbabilityGrid};
use qmct::statdist::{DistKind, RngStream, StudyDistribution};
use std::time::Instant;

fn main() {
    let g = StudyDistribution::new(DistKind::StdNormal).sample(RngStream::new(2026, 1), 10_000);
    let data = GroupedSample::from_groups(vec![g]).unwrap();
    let grid = ProbabilityGrid::median();
    let t0 = Instant::now();
    let k = kernel_estimate(&data, &grid, &KernelConfig::default()).unwrap().entry(0, 0, 0);
    let t1 = Instant::now();
    let b = bootstrap_estimate(&data, &grid).unwrap().entry(0, 0, 0);
    let t2 = Instant::now();
    let i = interval_estimate(&data, &grid, 0.05).unwrap().entry(0, 0, 0);
    let t3 = Instant::now();
    println!("pi/2 = {}", std::f64::consts::FRAC_PI_2);
    println!("kernel    {k:.5}  ({:?})", t1 - t0);
    println!("bootstrap {b:.5}  ({:?})", t2 - t1);
    println!("interval  {i:.5}  ({:?})", t3 - t2);
}
