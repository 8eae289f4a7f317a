#[test]
fn profile_frame_perturbed() {
    use rank2geo::cotangent::CotangentChart;
    use rank2geo::frame::*;
    use rank2geo::geometry::from_ode_text;
    use rank2geo::symca::{rat, rat_int, Rat};
    use rank2geo::wilczynski::ScaledField;
    let t0 = std::time::Instant::now();
    let d = from_ode_text(6, "1/2*p3^2 + 1/10*p0*p3^3").unwrap();
    let q: Vec<Rat> = vec![rat_int(0), rat_int(1), rat_int(-1), rat_int(0), rat_int(1), rat_int(0)];
    let ct = CotangentChart::new(&d, &q).unwrap();
    let n = 6;
    let mut lam = vec![rat_int(0); 2 * n];
    for i in 0..n { lam[i] = q[i].clone(); }
    lam[n + 3] = rat_int(3);
    lam[n + 4] = rat(1, 4);
    lam[n + 5] = rat(-1, 5);
    let f = SigmaFrame::new(&ct, &lam).unwrap();
    eprintln!("frame: {:?} b_flow terms={} pair terms={}", t0.elapsed(), f.b_flow.num_terms(), f.pair.num_terms());
    eprintln!("eps1 terms={}", f.epsilon1.field.num_terms());
    let h = ScaledField::plain(f.h.clone());
    let mut cur = f.epsilon1.clone();
    for i in 2..=2 * f.m {
        let nx = h.bracket(&cur).unwrap();
        eprintln!("chain {}: {:?} terms={}", i, t0.elapsed(), nx.field.num_terms());
        cur = nx;
    }
}
