use xmesh1d::analytic::Analytic;
use xmesh1d::mesh::node_positions_of;
use xmesh1d::model::{MaterialParams, ModelKind};
use xmesh1d::potential::PotentialCtx;

fn state(a: &Analytic, d0: f64, h0: f64, nv: usize) -> (Vec<f64>, Vec<f64>) {
    let p = a.params;
    let band = a.band_halfwidth(d0).unwrap().min(0.4 * p.length);
    let nb = (nv - 1) / 2;
    let no = nv - 1 - nb;
    let mut h = vec![h0];
    let wb = (band - 0.5 * h0) / nb as f64;
    h.extend(std::iter::repeat(wb).take(nb));
    let wo = (0.5 * p.length - band) / no as f64;
    h.extend(std::iter::repeat(wo).take(no));
    let x = node_positions_of(&h, p.length);
    let d: Vec<f64> = x
        .iter()
        .map(|&xi| a.damage_profile(d0, xi).unwrap())
        .collect();
    (d, h)
}

fn main() {
    let p = MaterialParams::table1();
    let ctx = PotentialCtx::new(ModelKind::LipField, p).unwrap();
    let a = Analytic::new(ModelKind::LipField, p).unwrap();
    let u = 4.5547738693467339e-5;
    let d0 = a.d0_of_u(u);
    let (d, h) = state(&a, d0, 2e-4, 13);
    let e = ctx.f_potential(&d, &h, u).unwrap();
    println!("plateau d0={d0:.4}: F={:.8e} sigma/sc={:.4}", e.value, e.sigma / 3e6);
    let (db, hb) = state(&a, 1.0 - 1e-12, 2.1e-13, 13);
    let eb = ctx.f_potential(&db, &hb, u).unwrap();
    println!("broken: F={:.8e} K={:.3e}", eb.value, eb.k);
}
