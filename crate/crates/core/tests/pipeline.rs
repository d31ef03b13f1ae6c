use std::sync::Arc;

use coorbit::coverings::{Covering, CoveringSpec, Placement, PuFlavor};
use coorbit::discretization::{sample_frame, signal_battery, InvertOptions, Method};
use coorbit::frames::{gram_kernel, make_family, TruncatedFrame};
use coorbit::localization::cross_gramian;
use coorbit::measure_space::{Point, QuadGrid, SignalGrid};
use coorbit::C64;
use serde_json::json;

fn gabor(width: f64, sg: &SignalGrid) -> Arc<dyn coorbit::frames::FrameFamily> {
    make_family("gabor", &json!({"window": {"type": "gaussian", "width": width}}), sg).unwrap()
}

#[test]
fn cross_gramian_is_reproduced_by_the_gramian() {
    let sg = SignalGrid::new(10.0, 256).unwrap();
    let f = gabor(1.0, &sg);
    let g = gabor(1.5, &sg);
    let dom = f.index_domain(&[[-8.0, 8.0], [-16.0, 16.0]]).unwrap();
    let grid = QuadGrid::build(&dom, &[[48, 48]]).unwrap();
    let tf = Arc::new(TruncatedFrame::new(f.clone(), grid.clone()).unwrap());
    let r = gram_kernel(&tf).unwrap().matrix(&grid);
    let ys = [Point::new(0.3, -1.2), Point::new(-2.0, 4.5), Point::new(1.7, 0.4)];
    let full = cross_gramian(f.as_ref(), g.as_ref(), grid.points(), &ys).unwrap().matrix;
    // (R_F o G)(x, y) at interior x
    let w = grid.weights();
    let mut dev: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (i, x) in grid.points().iter().enumerate() {
        if x.c[0].abs() > 4.0 || x.c[1].abs() > 10.0 {
            continue;
        }
        for j in 0..ys.len() {
            let v: C64 = (0..grid.len()).map(|z| r[(i, z)] * w[z] * full[(z, j)]).sum();
            dev = dev.max((v - full[(i, j)]).norm());
            scale = scale.max(full[(i, j)].norm());
        }
    }
    assert!(dev <= 1e-3 * scale, "{dev} vs {scale}");
}

#[test]
fn fine_covering_round_trips_with_both_inversions() {
    let sg = SignalGrid::new(10.0, 256).unwrap();
    let f = gabor(1.0, &sg);
    let dom = f.index_domain(&[[-8.0, 8.0], [-16.0, 16.0]]).unwrap();
    let grid = QuadGrid::build(&dom, &[[32, 32]]).unwrap();
    let tf = Arc::new(TruncatedFrame::new(f, grid).unwrap());
    let spec = CoveringSpec { cell_size: vec![[1.0, 2.0]], overlap: 0.0, placement: Placement::Center };
    let cov = Arc::new(Covering::lattice(&dom, spec).unwrap());
    let sf = sample_frame(&tf, &cov, PuFlavor::Indicator).unwrap();
    assert!(sf.defect().unwrap() < 0.5);
    let solve = InvertOptions::default();
    let neumann = InvertOptions { method: Method::Neumann, ..solve };
    for sig in signal_battery(&tf, 3, 11) {
        let (a, rep) = sf.atomic_coefficients(&sig, &solve).unwrap();
        let (b, _) = sf.atomic_coefficients(&sig, &neumann).unwrap();
        assert!(rep.relative_error_e <= 1e-8, "{rep:?}");
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(gap <= 1e-8 * a.iter().map(|x| x.norm()).fold(0.0, f64::max));
        let (_, rec) = sf.banach_reconstruct(&sf.samples(&sig), &solve, Some(&sig)).unwrap();
        assert!(rec.relative_error_e <= 1e-8, "{rec:?}");
    }
}
