use funcvi::check;
use funcvi::cnngp::ArchSpec;
use std::time::Instant;

fn main() {
    let arch = ArchSpec::interp_stack(1, 8, 8, 8, 8, 0.2, 0.08, 0.5, 0.1).unwrap();
    println!("layers: {}", arch.layers.len());
    let t0 = Instant::now();
    let out = check::check_kernel_mc(&arch, 512, 200, 0.10, 99);
    println!("C=512 200 draws: {:?}  -> {}", t0.elapsed(), out.detail);
    let t0 = Instant::now();
    let e32 = check::kernel_mc_median_err(&arch, 32, 200, 99);
    println!("C=32 200 draws: {:?} median err {e32:.4}", t0.elapsed());
}
