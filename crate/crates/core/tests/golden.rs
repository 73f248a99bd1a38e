//! Frozen outputs of a fixed small model. A change here means the numerics
//! of the encoders or losses changed.

use hce_core::cones::ConeConfig;
use hce_core::losses::{contrastive_total, total_loss, EmbeddedBatch, LossConfig};
use hce_core::manifold::Curvature;
use hce_core::model::{init_params, ModelDims, ModelParams, TagSet};

fn model() -> ModelParams {
    init_params(ModelDims::new(6, 4, 3, 3), Curvature::new(1.5).unwrap(), 0.1, 2024).unwrap()
}

const FEATURES: [[f64; 4]; 3] = [[0.5, -1.0, 0.25, 2.0], [-0.3, 0.8, 1.1, -0.6], [1.5, 0.0, -0.75, 0.1]];

fn sets() -> [TagSet; 3] {
    [
        TagSet::new(vec![0, 2, 5]).unwrap(),
        TagSet::new(vec![1, 3]).unwrap(),
        TagSet::new(vec![4]).unwrap(),
    ]
}

fn subsets() -> [TagSet; 3] {
    [
        TagSet::new(vec![2]).unwrap(),
        TagSet::new(vec![3]).unwrap(),
        TagSet::new(vec![4]).unwrap(),
    ]
}

fn batch(m: &ModelParams) -> EmbeddedBatch {
    EmbeddedBatch {
        fonts: FEATURES.iter().map(|f| m.encode_font(f).unwrap()).collect(),
        imps: sets().iter().map(|s| m.encode_tagset(s).unwrap()).collect(),
        sub_imps: subsets().iter().map(|s| m.encode_tagset(s).unwrap()).collect(),
    }
}

fn close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()), "got {got:?}, want {want:?}");
    }
}

#[test]
fn font_embeddings() {
    let b = batch(&model());
    let want = [
        [
            -0.030740775699370875,
            -0.2213706012639739,
            0.32752688527127405,
            0.9076841221684676,
        ],
        [
            0.023369161847939947,
            0.0652922168502749,
            -0.011140297476332127,
            0.8195120281003974,
        ],
        [
            0.07972764607742205,
            0.004311785952814559,
            -0.26300088419559625,
            0.8615168139981261,
        ],
    ];
    for (p, w) in b.fonts.iter().zip(&want) {
        close(&p.to_ambient(), w);
    }
}

#[test]
fn tagset_embeddings() {
    let b = batch(&model());
    let want = [
        [
            0.038298971579716255,
            -0.026357510086286947,
            0.022839285506051715,
            0.818138025757944,
        ],
        [
            0.03878255674624355,
            -0.02447406620129671,
            0.023661991748962576,
            0.818125676864133,
        ],
        [
            -0.08825816112055536,
            0.018080929620105705,
            -0.04268621546338514,
            0.8225601514038731,
        ],
        [
            -0.15976487066864356,
            -0.01214666826207515,
            -0.18381123057919752,
            0.8521300315112377,
        ],
        [
            -0.08330995106015489,
            0.003287051885243845,
            -0.19716577698967844,
            0.8440926269896877,
        ],
    ];
    let points: Vec<_> = b.imps.iter().chain(&b.sub_imps[..2]).collect();
    for (p, w) in points.into_iter().zip(&want) {
        close(&p.to_ambient(), w);
    }
    // the third subset equals its singleton set
    assert_eq!(b.sub_imps[2], b.imps[2]);
}

#[test]
fn losses() {
    let m = model();
    let b = batch(&m);
    let cone = ConeConfig::new(0.1, m.curvature).unwrap();
    let cfg = LossConfig::default();
    close(
        &[contrastive_total(&b, m.temperature(), m.curvature, &cfg).unwrap()],
        &[4.991387985688245],
    );
    let l = total_loss(&b, m.temperature(), &cfg, &cone).unwrap();
    close(
        &[l.cont_if, l.cont_sub, l.cont_fi, l.cont, l.ent_if, l.ent_sub, l.total],
        &[
            6.074450359924677,
            8.285479562916144,
            2.8028110099560797,
            4.991387985688245,
            1.028864019668462,
            4.431708522495042,
            5.537445239904596,
        ],
    );
}
