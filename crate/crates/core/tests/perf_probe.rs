// temporary calibration probe; removed before finalizing
use std::time::Instant;

use hsprior_core::corruption::synthetic_cube;
use hsprior_core::engine::{restore, TaskConfig};
use hsprior_core::net::{ArchSpec, Network, Variant};

#[test]
#[ignore]
fn probe_param_counts() {
    let shape = [16, 64, 64];
    let p2 = Network::build(ArchSpec::default_2d(shape), 1).unwrap().param_count();
    let p3 = Network::build(ArchSpec::default_3d(shape), 1).unwrap().param_count();
    println!("2D params: {p2}");
    println!("3D params: {p3}");
    println!("ratio: {:.3} (need > {})", p3 as f64 / p2 as f64, 16.0 / 4.0);
}

#[test]
#[ignore]
fn probe_iteration_speed_2d() {
    let clean = synthetic_cube(16, 64, 64, 1);
    let mut cfg = TaskConfig::denoise(ArchSpec::default_2d([16, 64, 64]), 7);
    cfg.iters = 20;
    let t = Instant::now();
    let (_, h) = restore(&cfg, &clean, None, None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    println!("2D: {} iters in {:.2}s => {:.3} s/iter", h.len(), secs, secs / h.len() as f64);
}

#[test]
#[ignore]
fn probe_iteration_speed_3d() {
    let clean = synthetic_cube(16, 64, 64, 1);
    let mut cfg = TaskConfig::denoise(ArchSpec::default_3d([16, 64, 64]), 7);
    cfg.iters = 10;
    let t = Instant::now();
    let (_, h) = restore(&cfg, &clean, None, None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    println!("3D: {} iters in {:.2}s => {:.3} s/iter", h.len(), secs, secs / h.len() as f64);
}

#[test]
#[ignore]
fn probe_denoise_trajectory_2d() {
    use hsprior_core::corruption::add_gaussian_noise;
    use hsprior_core::metrics::mpsnr;

    let iters: usize = std::env::var("PROBE_ITERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(400);
    let step = (iters / 20).max(1);
    let clean = synthetic_cube(16, 64, 64, 1);
    let noisy = add_gaussian_noise(&clean, 25.0 / 255.0, 2).unwrap();
    println!("noisy mpsnr: {:.3}", mpsnr(&noisy, &clean).unwrap());
    let mut cfg = TaskConfig::denoise(ArchSpec::default_2d([16, 64, 64]), 7);
    cfg.iters = iters;
    let t = Instant::now();
    let (out, h) = restore(&cfg, &noisy, None, Some(&clean)).unwrap();
    let track = h.mpsnr.as_ref().unwrap();
    for i in (0..h.len()).step_by(step) {
        println!("iter {i:5}  energy {:.6e}  mpsnr {:.3}", h.energies[i], track[i]);
    }
    println!("final: energy {:.6e} mpsnr {:.3}", h.energies[h.len()-1], track[h.len()-1]);
    println!("returned-best mpsnr: {:.3}", mpsnr(&out, &clean).unwrap());
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
}
