use sbm::grid::make_heaviside_ic;
use sbm::spde::simulate;
use sbm::{ModelParams, SeedPlan};
fn main() {
    let p = ModelParams::on_default_domain(-0.8, 1.0, 0.05, 0.5).unwrap();
    let ic = make_heaviside_ic(&p.grid);
    let t0 = std::time::Instant::now();
    let reps = 100;
    for r in 0..reps {
        simulate(&ic, 0.5, &p, SeedPlan::new(1), r, &[]).unwrap();
    }
    let el = t0.elapsed().as_secs_f64();
    let cells = p.grid.n_cells as f64 * (0.5 / p.dt) * reps as f64;
    println!(
        "n_cells {} ; {:.2} ns per cell-step; {:.3}s per replica",
        p.grid.n_cells,
        el / cells * 1e9,
        el / reps as f64
    );
}
