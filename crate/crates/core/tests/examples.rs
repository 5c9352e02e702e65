use std::collections::BTreeMap;

use infoloss::dimension::{conditional_dimension, fit_dimension, marginal_dimension, output_dimension};
use infoloss::entropy::{
    conditional_entropy, entropy_curve, plugin_entropy, BinCounts, ConditioningKey, CurveSettings, Mode,
};
use infoloss::loss::{absolute_loss, componentwise_bound, relative_loss, AbsoluteLoss, LossReport};
use infoloss::measure::{sample, support_diameter, DistributionSpec, Region};
use infoloss::quantizer::{quantize, refine, BinIndex};
use infoloss::reconstruct::{error_probability, fano_check, pe_sequence, train_map_reconstructor};
use infoloss::systems::{analytic_relative_loss, atom_table, SystemSpec};

const MANY: usize = 1_000_000;

fn curve(dist: &DistributionSpec, system: &SystemSpec, seed: u64) -> infoloss::entropy::EntropyCurve {
    let settings = CurveSettings::new(4, 12, MANY, seed, Mode::AtomOracle);
    entropy_curve(dist, system, &settings).unwrap()
}

fn bin(coords: &[i64], n: u64) -> BinIndex {
    BinIndex { coords: coords.to_vec(), resolution: n }
}

fn counts(cs: &[u64]) -> BinCounts {
    let mut b = BinCounts::new();
    for (i, &c) in cs.iter().enumerate() {
        b.add_count(bin(&[i as i64], 1), c);
    }
    b
}

#[test]
fn sampling() {
    let b = sample(&DistributionSpec::uniform(0.0, 1.0), 4, 7).unwrap();
    assert!(b.as_flat().iter().all(|x| (0.0..1.0).contains(x)));
    let b = sample(&DistributionSpec::discrete(vec![vec![0.5]], vec![1.0]), 3, 0).unwrap();
    assert_eq!(b.as_flat(), &[0.5, 0.5, 0.5]);
    let mix = DistributionSpec::mixture(vec![
        (0.5, DistributionSpec::uniform(0.0, 1.0)),
        (0.5, DistributionSpec::point_mass(vec![2.0])),
    ]);
    let b = sample(&mix, 100_000, 1).unwrap();
    let frac = b.as_flat().iter().filter(|&&x| x == 2.0).count() as f64 / 1e5;
    assert!((frac - 0.5).abs() < 0.01);
    assert_eq!(sample(&mix, 1000, 3).unwrap(), sample(&mix, 1000, 3).unwrap());
    assert!(DistributionSpec::uniform(1.0, 1.0).validate().is_err());
    assert!(DistributionSpec::discrete(vec![vec![0.0]], vec![0.7]).validate().is_err());
}

#[test]
fn region_probabilities() {
    let u = DistributionSpec::uniform(-1.0, 1.0);
    assert!((u.region_prob(&Region::closed_box(&[-0.5], &[0.5])) - 0.5).abs() < 1e-12);
    let g = DistributionSpec::truncated_gaussian(0.0, 1.0, -4.0, 4.0);
    let p = g.region_prob(&Region::closed_box(&[-1.0], &[1.0]));
    assert!((p - 0.682_732_738_124_399).abs() < 1e-10, "{p}");
    let u01 = DistributionSpec::uniform(0.0, 1.0);
    assert_eq!(u01.region_prob(&Region::closed_box(&[2.0], &[3.0])), 0.0);
}

#[test]
fn diameters() {
    assert_eq!(support_diameter(&DistributionSpec::uniform(0.0, 1.0)).unwrap(), 1.0);
    let d = support_diameter(&DistributionSpec::uniform_box(vec![0.0, 0.0], vec![1.0, 1.0])).unwrap();
    assert!((d - 2f64.sqrt()).abs() < 1e-12);
    let g = DistributionSpec::truncated_gaussian(0.0, 1.0, -3.0, 3.0);
    assert_eq!(support_diameter(&g).unwrap(), 6.0);
}

#[test]
fn system_application() {
    let c = SystemSpec::center_clipper(0.5);
    assert_eq!(c.apply(&[0.3]).unwrap(), vec![0.0]);
    assert_eq!(c.apply(&[0.8]).unwrap(), vec![0.8]);
    assert_eq!(SystemSpec::Identity.apply(&[0.2, -0.7]).unwrap(), vec![0.2, -0.7]);
    assert!(SystemSpec::projection(vec![3]).validate(2).is_err());
}

#[test]
fn atom_tables() {
    let t = atom_table(&SystemSpec::center_clipper(0.5), &DistributionSpec::uniform(-1.0, 1.0)).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t.entries[0].output, vec![0.0]);
    assert!((t.entries[0].mass - 0.5).abs() < 1e-12);

    let q = SystemSpec::uniform_quantizer(8, 0.0, 1.0);
    let t = atom_table(&q, &DistributionSpec::uniform(0.0, 1.0)).unwrap();
    assert_eq!(t.len(), 8);
    assert!(t.entries.iter().all(|e| (e.mass - 0.125).abs() < 1e-12));

    let t = atom_table(&SystemSpec::Identity, &DistributionSpec::uniform(0.0, 1.0)).unwrap();
    assert!(t.is_empty());
}

#[test]
fn analytic_losses() {
    let u = DistributionSpec::uniform(-1.0, 1.0);
    let u01 = DistributionSpec::uniform(0.0, 1.0);
    let q = SystemSpec::uniform_quantizer(8, 0.0, 1.0);
    assert_eq!(analytic_relative_loss(&SystemSpec::center_clipper(0.5), &u), Some(0.5));
    assert_eq!(analytic_relative_loss(&q, &u01), Some(1.0));
    assert_eq!(analytic_relative_loss(&SystemSpec::Identity, &u01), Some(0.0));
    let qa = SystemSpec::compose(q, SystemSpec::affine(3.0, 1.0));
    assert_eq!(analytic_relative_loss(&qa, &u01), Some(1.0));
}

#[test]
fn quantization() {
    assert_eq!(quantize(&[0.37], 10).unwrap().coords, vec![3]);
    assert_eq!(quantize(&[-0.25], 4).unwrap().coords, vec![-1]);
    assert_eq!(quantize(&[0.5, 0.75], 2).unwrap().coords, vec![1, 1]);
    assert!(quantize(&[f64::NAN], 2).is_err());

    assert_eq!(refine(&bin(&[0], 2), &[0.37]).unwrap(), bin(&[1], 4));
    assert_eq!(refine(&bin(&[0], 1), &[0.9]).unwrap(), bin(&[1], 2));
    assert_eq!(refine(&bin(&[0, 0], 1), &[0.1, 0.6]).unwrap(), bin(&[0, 1], 2));
}

#[test]
fn plugin_values() {
    assert!((plugin_entropy(&counts(&[25, 25, 25, 25])).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(plugin_entropy(&counts(&[100])).unwrap(), 0.0);
    assert!((plugin_entropy(&counts(&[3, 1])).unwrap() - 0.811_278_124_459_132_8).abs() < 1e-12);
    assert!(plugin_entropy(&BinCounts::new()).is_err());
}

#[test]
fn conditional_values() {
    let marg = counts(&[5, 3, 2]);
    let mut g = BTreeMap::new();
    g.insert(ConditioningKey::Atom(0), marg.clone());
    let h = conditional_entropy(&g).unwrap();
    assert!((h - plugin_entropy(&marg).unwrap()).abs() < 1e-12);

    let mut g = BTreeMap::new();
    for i in 0..4 {
        g.insert(ConditioningKey::Atom(i), counts(&[7]));
    }
    assert_eq!(conditional_entropy(&g).unwrap(), 0.0);

    let mut g = BTreeMap::new();
    g.insert(ConditioningKey::Atom(0), counts(&[10, 10]));
    g.insert(ConditioningKey::Atom(1), counts(&[10, 10]));
    assert!((conditional_entropy(&g).unwrap() - 1.0).abs() < 1e-12);
    assert!(conditional_entropy(&BTreeMap::new()).is_err());
}

#[test]
fn curve_rows() {
    let u01 = DistributionSpec::uniform(0.0, 1.0);
    let id = curve(&u01, &SystemSpec::Identity, 1);
    for r in &id.rows {
        assert!((r.h_marginal - r.k as f64).abs() < 0.02);
        assert!(r.h_conditional.abs() < 1e-9);
    }

    let q = curve(&u01, &SystemSpec::uniform_quantizer(8, 0.0, 1.0), 2);
    for r in &q.rows {
        assert!((r.h_conditional - (r.k as f64 - 3.0)).abs() < 0.02, "k = {}", r.k);
    }

    // half the mass sits on the atom, where the conditional is uniform over 2^k cells of [-0.5, 0.5]
    let c = curve(&DistributionSpec::uniform(-1.0, 1.0), &SystemSpec::center_clipper(0.5), 3);
    let r = c.rows.iter().find(|r| r.k == 10).unwrap();
    assert!((r.ratio() - 0.5 * 10.0 / r.h_marginal).abs() < 0.05);

    let bad = CurveSettings::new(4, 8, 10_000, 0, Mode::AtomOracle);
    let opaque = SystemSpec::compose(SystemSpec::Square, SystemSpec::center_clipper(0.2));
    assert!(entropy_curve(&u01, &opaque, &bad).is_err());
}

#[test]
fn dimensions() {
    let u = curve(&DistributionSpec::uniform(0.0, 1.0), &SystemSpec::Identity, 4);
    let fit = marginal_dimension(&u).unwrap();
    assert!((fit.slope - 1.0).abs() < 0.05 && fit.intercept.abs() < 0.1);
    assert!(conditional_dimension(&u).unwrap().slope.abs() < 0.05);

    let pts: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 + 0.5]).collect();
    let d = DistributionSpec::discrete(pts, vec![0.125; 8]);
    let fit = marginal_dimension(&curve(&d, &SystemSpec::Identity, 5)).unwrap();
    assert!(fit.slope.abs() < 0.05 && (fit.intercept - 3.0).abs() < 0.1);

    let c = curve(&DistributionSpec::uniform(-1.0, 1.0), &SystemSpec::center_clipper(0.5), 6);
    assert!((output_dimension(&c).unwrap().slope - 0.5).abs() < 0.05);
    assert!((conditional_dimension(&c).unwrap().slope - 0.5).abs() < 0.05);

    assert!(fit_dimension(&[(4, 1.0), (5, 2.0)]).is_err());
}

#[test]
fn losses() {
    let u01 = DistributionSpec::uniform(0.0, 1.0);
    let u = DistributionSpec::uniform(-1.0, 1.0);
    let q = curve(&u01, &SystemSpec::uniform_quantizer(8, 0.0, 1.0), 7);
    let rel = relative_loss(&q).unwrap();
    assert!((rel.ratio - 0.75).abs() < 0.02);
    assert!((rel.slope - 1.0).abs() < 0.05);

    let c = curve(&u, &SystemSpec::center_clipper(0.5), 8);
    assert!((relative_loss(&c).unwrap().slope - 0.5).abs() < 0.05);
    assert_eq!(absolute_loss(&c).unwrap(), AbsoluteLoss::Diverging);

    let id = curve(&u01, &SystemSpec::Identity, 9);
    assert!(relative_loss(&id).unwrap().slope <= 0.05);
    match absolute_loss(&id).unwrap() {
        AbsoluteLoss::Finite(b) => assert!(b.abs() < 0.05),
        AbsoluteLoss::Diverging => panic!("identity diverges"),
    }

    match absolute_loss(&curve(&u, &SystemSpec::Square, 10)).unwrap() {
        AbsoluteLoss::Finite(b) => assert!((b - 1.0).abs() < 0.05),
        AbsoluteLoss::Diverging => panic!("square diverges"),
    }

    let point = DistributionSpec::point_mass(vec![0.3]);
    assert!(relative_loss(&curve(&point, &SystemSpec::Identity, 11)).is_err());
}

#[test]
fn componentwise_bounds() {
    let cases = [
        (
            DistributionSpec::uniform_box(vec![0.0, 0.0], vec![1.0, 1.0]),
            SystemSpec::componentwise(vec![SystemSpec::Identity, SystemSpec::uniform_quantizer(8, 0.0, 1.0)]),
            0.5,
        ),
        (DistributionSpec::uniform_box(vec![0.0, 0.0], vec![1.0, 1.0]), SystemSpec::Identity, 0.0),
        (
            DistributionSpec::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0]),
            SystemSpec::componentwise(vec![SystemSpec::center_clipper(0.5), SystemSpec::center_clipper(0.5)]),
            0.5,
        ),
    ];
    for (i, (dist, system, want)) in cases.iter().enumerate() {
        let settings = CurveSettings::new(4, 12, MANY, 20 + i as u64, Mode::AtomOracle).with_per_axis(true);
        let cv = entropy_curve(dist, system, &settings).unwrap();
        let joint = relative_loss(&cv).unwrap().slope;
        let b = componentwise_bound(dist, system, &cv).unwrap();
        assert!((joint - want).abs() < 0.05, "{i}: joint {joint}");
        assert!((b.joint - want).abs() < 0.05, "{i}: bound-joint {}", b.joint);
        assert!((b.marginal - want).abs() < 0.05, "{i}: bound-marginal {}", b.marginal);
        assert!(joint <= b.joint + 0.05 && b.joint <= b.marginal + 0.05);
    }

    let u = DistributionSpec::uniform(-1.0, 1.0);
    let cv = curve(&u, &SystemSpec::center_clipper(0.5), 30);
    assert!(componentwise_bound(&u, &SystemSpec::center_clipper(0.5), &cv).is_err());
}

#[test]
fn conjecture_gaps() {
    let u = DistributionSpec::uniform(-1.0, 1.0);
    let u01 = DistributionSpec::uniform(0.0, 1.0);
    let cases = [
        (u.clone(), SystemSpec::center_clipper(0.5)),
        (u01.clone(), SystemSpec::Identity),
        (u01, SystemSpec::uniform_quantizer(8, 0.0, 1.0)),
    ];
    for (i, (d, s)) in cases.iter().enumerate() {
        let report = LossReport::build(d, s, &curve(d, s, 40 + i as u64)).unwrap();
        let gap = report.conjecture_gap.unwrap();
        assert!(gap.abs() < 0.07, "{}: gap {gap}", s.label());
    }
}

#[test]
fn reconstruction() {
    let u = DistributionSpec::uniform(-1.0, 1.0);
    let u01 = DistributionSpec::uniform(0.0, 1.0);

    let rec = train_map_reconstructor(&u01, &SystemSpec::Identity, 4, 10, 100_000, 1).unwrap();
    assert!(error_probability(&rec, &u01, &SystemSpec::Identity, 100_000, 2).unwrap().points.iter().all(|p| p.pe < 0.01));

    let clip = SystemSpec::center_clipper(0.5);
    let rec = train_map_reconstructor(&u, &clip, 10, 10, 200_000, 1).unwrap();
    let rule = rec.rule(10).unwrap();
    let cell = &rule.atoms[0][&0];
    assert!(cell[0] >= -512 && cell[0] < 512, "atom cell {cell:?} outside [-0.5, 0.5]");
    let pe = error_probability(&rec, &u, &clip, MANY, 2).unwrap();
    assert!((pe.points[0].pe - 0.5 * (1.0 - 2f64.powi(-10))).abs() < 0.01);

    let mag = SystemSpec::magnitude_clipper(0.5);
    let rec = train_map_reconstructor(&u, &mag, 10, 10, 200_000, 1).unwrap();
    let pe = error_probability(&rec, &u, &mag, MANY, 2).unwrap();
    assert!((pe.points[0].pe - 0.7495).abs() < 0.01);

    let q = SystemSpec::uniform_quantizer(8, 0.0, 1.0);
    let rec = train_map_reconstructor(&u01, &q, 6, 6, 100_000, 1).unwrap();
    for (&a, cell) in &rec.rule(6).unwrap().atoms[0] {
        assert_eq!(cell[0] >> 3, a as i64, "atom {a} maps outside its cell");
    }
}

#[test]
fn fano_margins() {
    let u = DistributionSpec::uniform(-1.0, 1.0);
    let u01 = DistributionSpec::uniform(0.0, 1.0);
    let run = |d: &DistributionSpec, s: &SystemSpec| {
        let l = relative_loss(&curve(d, s, 50)).unwrap().slope;
        let pe = pe_sequence(d, s, 4, 12, 200_000, 51, 200_000, 52).unwrap();
        fano_check(l, &pe)
    };
    let f = run(&u, &SystemSpec::center_clipper(0.5));
    assert!(f.satisfied && f.monotone && f.margin.abs() < 0.03, "{f:?}");
    let f = run(&u, &SystemSpec::magnitude_clipper(0.5));
    assert!(f.satisfied && (f.margin - 0.25).abs() < 0.03, "{f:?}");
    let f = run(&u01, &SystemSpec::Identity);
    assert!(f.satisfied && f.margin.abs() < 0.02, "{f:?}");
}
