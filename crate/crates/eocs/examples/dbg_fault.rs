use eocs::features::encode;
use eocs::grid::OperatingCondition;
use eocs::nn::*;
use eocs::testing;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    let grid = testing::six_bus();
    let all = OperatingCondition::all_in_service(grid.branch_count());
    let arch = Architecture::for_system(grid.bus_count(), grid.line_count(), None, Aggregator::Sum);
    let mut model = PgnnModel::new(arch, 5).unwrap();
    let fs = encode(&grid, &all, 2, &model.scaling).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<f64> = (0..model.arch.m).map(|_| f64::from(rng.gen_bool(0.3))).collect();
    let analytic = backward(&model, &fs, &labels).unwrap().flat();
    for h in [1e-4, 1e-5, 1e-6] {
        let mut worst = (0.0f64, 0usize);
        for idx in 0..model.param_count() {
            let saved = model.get_param(idx);
            model.set_param(idx, saved + h);
            let up = bce_loss(&pgnn_forward(&model, &fs).unwrap(), &labels);
            model.set_param(idx, saved - h);
            let down = bce_loss(&pgnn_forward(&model, &fs).unwrap(), &labels);
            model.set_param(idx, saved);
            let fd = (up - down) / (2.0 * h);
            let denom = analytic[idx].abs().max(fd.abs()).max(1e-6);
            let rel = (analytic[idx] - fd).abs() / denom;
            if rel > worst.0 { worst = (rel, idx); }
        }
        println!("h={h:.0e}: worst rel err {:.3e} at param {} (analytic {:.6e})", worst.0, worst.1, analytic[worst.1]);
    }
}
