//! Scratch probe: compare the incremental potential of the wide-plateau
//! state found by the solver against the analytic centered triangle.

use xmesh1d::analytic::Analytic;
use xmesh1d::model::{MaterialParams, ModelKind};
use xmesh1d::potential::PotentialCtx;

fn main() {
    let params = MaterialParams::table1();
    let ctx = PotentialCtx::new(ModelKind::LipField, params).unwrap();
    let analytic = Analytic::new(ModelKind::LipField, params).unwrap();
    let u = 5.8814070351758798e-5;
    let lc = params.lc;

    // state B: solver output at step 133 (node positions and damage)
    let xb = [
        9.2335855474769163e-2,
        9.4108774393881017e-2,
        9.4532006504012708e-2,
        9.4974804807853669e-2,
        9.5442005808497418e-2,
        9.5941367214790158e-2,
        9.6487067399524562e-2,
        9.7112033758386881e-2,
        9.7966714149338732e-2,
        9.8869623189878741e-2,
        9.9246690914287380e-2,
        9.9623961195911145e-2,
        1.0000000000000001e-1,
    ];
    let db = [
        1.0402814763942178e-1,
        9.6448493984121267e-2,
        8.5867691227582241e-2,
        7.4797733624844834e-2,
        6.3117708598194391e-2,
        5.0633673426315966e-2,
        3.6991168789593167e-2,
        2.1367009796751751e-2,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    let mut hb = vec![2.0 * xb[0]];
    for i in 1..xb.len() {
        hb.push(xb[i] - xb[i - 1]);
    }
    let eb = ctx.f_potential(&db, &hb, u).unwrap();
    println!("B (solver): F={:.10e} sigma/sc={:.6}", eb.value, eb.sigma / 3e6);

    // state A: analytic centered triangle, nodes on the profile
    let d0 = analytic.d0_of_u(u);
    println!("analytic d0={d0:.6} law sigma/sc={:.6}", 1.0 - d0 * d0);
    let nv = xb.len();
    for h0 in [1e-3, 1e-4, 1e-5, 2e-13] {
        let band = d0 * lc;
        let nb = 5; // elements across the band
        let mut h = vec![h0];
        let wb = (band - 0.5 * h0) / nb as f64;
        for _ in 0..nb {
            h.push(wb);
        }
        let rest = 0.5 * params.length - band;
        for _ in 0..(nv - 1 - nb) {
            h.push(rest / (nv - 1 - nb) as f64);
        }
        let x = xmesh1d::mesh::node_positions_of(&h, params.length);
        let d: Vec<f64> = x.iter().map(|&xi| (d0 - xi / lc).max(0.0)).collect();
        let ea = ctx.f_potential(&d, &h, u).unwrap();
        println!(
            "A h0={h0:.0e}: F={:.10e} sigma/sc={:.6}",
            ea.value,
            ea.sigma / 3e6
        );
    }
}

#[allow(dead_code)]
fn curve() {}
