use proptest::prelude::*;

use refcomp::corpus::{decode_cloud, encode_cloud, CloudFormat};
use refcomp::geom::{knn, normalize_unit_sphere, sq_dist, Point3, PointCloud};
use refcomp::metrics::{chamfer, f1, ucd};
use refcomp::refdata::neighbourhood_union;

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..max)
        .prop_map(|v| PointCloud::new(v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_zero_on_itself(a in cloud(40), b in cloud(40)) {
        prop_assert_eq!(chamfer(&a, &b), chamfer(&b, &a));
        prop_assert_eq!(chamfer(&a, &a), 0.0);
        prop_assert!(ucd(&a, &b) <= chamfer(&a, &b));
    }

    #[test]
    fn knn_matches_a_sorted_scan(target in cloud(60), q in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), k in 1usize..10) {
        let q = Point3::new(q.0, q.1, q.2);
        let k = k.min(target.len());
        let mut all: Vec<(f64, usize)> = target.iter().enumerate().map(|(i, p)| (sq_dist(&q, p), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got = knn(&q, &target, k).unwrap();
        prop_assert_eq!(got.indices, all[..k].iter().map(|e| e.1).collect::<Vec<_>>());
    }

    #[test]
    fn f1_grows_with_the_threshold(a in cloud(30), b in cloud(30), e in 0.01f64..0.5) {
        let lo = f1(&a, &b, e).unwrap();
        let hi = f1(&a, &b, 2.0 * e).unwrap();
        prop_assert!(hi.accuracy >= lo.accuracy && hi.completeness >= lo.completeness);
        prop_assert!((0.0..=1.0).contains(&lo.f1));
    }

    #[test]
    fn neighbourhood_union_is_sorted_unique_and_bounded(t in cloud(20), c in cloud(60), k in 1usize..8) {
        let k = k.min(c.len());
        let sel = neighbourhood_union(&t, &c, k).unwrap();
        prop_assert!(sel.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(sel.len() >= k && sel.len() <= (t.len() * k).min(c.len()));
    }

    #[test]
    fn normalized_clouds_fit_the_unit_sphere(a in cloud(50)) {
        let (n, frame) = normalize_unit_sphere(&a);
        prop_assert!(n.iter().all(|p| p.norm() <= 1.0 + 1e-12));
        for (p, q) in a.iter().zip(frame.denormalize(&n).iter()) {
            prop_assert!(sq_dist(p, q) < 1e-20);
        }
    }

    #[test]
    fn xyz_round_trip_is_close_and_pcb_keeps_f32(a in cloud(30)) {
        let path = std::path::Path::new("mem");
        let back = decode_cloud(&encode_cloud(&a, CloudFormat::XyzAscii), CloudFormat::XyzAscii, path).unwrap();
        for (p, q) in a.iter().zip(back.iter()) {
            prop_assert!(sq_dist(p, q) < 1e-15);
        }
        let back = decode_cloud(&encode_cloud(&a, CloudFormat::PcbBinary), CloudFormat::PcbBinary, path).unwrap();
        for (p, q) in a.iter().zip(back.iter()) {
            prop_assert_eq!(q.x, p.x as f32 as f64);
        }
    }
}
