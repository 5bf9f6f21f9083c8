//! Held-out evaluation: action reconstruction error and flow endpoint error.

use rayon::prelude::*;

use super::direct::{DirectIdm, DirectInput};
use super::jidm::PatchFieldModel;
use super::Model;
use crate::dataset::TransitionRecord;
use crate::error::{Error, Result};
use crate::field::Pixel;
use crate::flow::FlowField;
use crate::inversion::{aggregate_invert, RidgeParams};

const DIRECT_CHUNK: usize = 16;

fn valid_pixels(flow: &FlowField) -> Vec<Pixel> {
    (0..flow.valid.len()).filter(|i| flow.valid[*i]).map(|i| Pixel::new(i / flow.width, i % flow.width)).collect()
}

/// Action recovered by pooled inversion of the model's field over the
/// record's valid flow pixels, with `lambda` in image-normalized units.
pub fn recover_field_action(model: &PatchFieldModel, record: &TransitionRecord, lambda: f64) -> Result<Vec<f64>> {
    let pixels = valid_pixels(&record.flow);
    let field = model.field_at(&record.o_t, &pixels)?;
    let ridge = RidgeParams::normalized(lambda, model.spec.features.height, model.spec.features.width);
    Ok(aggregate_invert(&field, &record.flow, &ridge)?.delta_a)
}

fn direct_actions(model: &DirectIdm, records: &[TransitionRecord]) -> Result<Vec<Vec<f64>>> {
    let chunks: Vec<Result<Vec<Vec<f64>>>> = records
        .par_chunks(DIRECT_CHUNK)
        .map(|c| model.predict(&c.iter().map(DirectInput::from).collect::<Vec<_>>()))
        .collect();
    let mut out = Vec::with_capacity(records.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Recovered actions for every record, in order.
pub fn recover_actions(model: &Model, records: &[TransitionRecord], lambda_inf: f64) -> Result<Vec<Vec<f64>>> {
    match model {
        Model::Field(m) => records.par_iter().map(|r| recover_field_action(m, r, lambda_inf)).collect(),
        Model::Direct(m) => direct_actions(m, records),
    }
}

/// Per-record mean of the per-joint squared error with actions divided by
/// `delta_max`, averaged over records.
pub fn action_mse(recovered: &[Vec<f64>], records: &[TransitionRecord], delta_max: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptySelection("evaluation set is empty".into()));
    }
    let per: Vec<f64> = recovered
        .iter()
        .zip(records)
        .map(|(a, r)| {
            let n = r.delta_a.len() as f64;
            a.iter().zip(&r.delta_a).map(|(x, y)| ((x - y) / delta_max).powi(2)).sum::<f64>() / n
        })
        .collect();
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Action MSE with recovered actions clamped to `±delta_max`, the range
/// every executable action lies in.
pub fn eval_action_mse(model: &Model, records: &[TransitionRecord], lambda_inf: f64, delta_max: f64) -> Result<f64> {
    let mut rec = recover_actions(model, records, lambda_inf)?;
    rec.iter_mut().flatten().for_each(|v| *v = v.clamp(-delta_max, delta_max));
    action_mse(&rec, records, delta_max)
}

/// Mean endpoint error of the predicted flow `J δa` over valid pixels.
pub fn eval_flow_epe(model: &PatchFieldModel, records: &[TransitionRecord]) -> Result<f64> {
    let per: Vec<Result<(f64, usize)>> = records
        .par_iter()
        .map(|r| {
            let pixels = valid_pixels(&r.flow);
            let mats = model.evaluate_field(&r.o_t, &pixels)?;
            let mut sum = 0.0;
            for (p, j) in pixels.iter().zip(&mats) {
                let pred = j.mul_vec(&r.delta_a);
                let v = r.flow.get(p.row, p.col);
                sum += ((pred[0] - v[0] as f64).powi(2) + (pred[1] - v[1] as f64).powi(2)).sqrt();
            }
            Ok((sum, pixels.len()))
        })
        .collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for p in per {
        let (s, c) = p?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::EmptySelection("no valid flow pixels".into()));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_selfplay, ActionLaw, SelfPlaySpec};
    use crate::field::analytic_field;
    use crate::flow::first_order_flow;
    use crate::kinematics::{Action, CameraModel, ChainConfig, ChainState, ChainTaper};
    use crate::models::direct::{DirectSpec, DirectVariant};
    use crate::models::features::FeatureSpec;
    use crate::models::jidm::FieldModelSpec;
    use crate::render::RenderStyle;

    #[test]
    fn zero_predictor_scores_second_moment() {
        let config = ChainConfig::tapered(2, &ChainTaper::default()).unwrap();
        let camera = CameraModel::fit(&config, 16, 16, 32.0).unwrap();
        let spec = SelfPlaySpec {
            style: RenderStyle::default_for(2),
            config,
            camera,
            episodes: 50,
            steps_per_episode: 40,
            law: ActionLaw::Uniform,
            delta_max: 0.12,
            seed: 1,
        };
        let ds = generate_selfplay(&spec).unwrap();
        let mut f = FeatureSpec::new(16, 16, 1);
        f.patch_size = 3;
        let field = FieldModelSpec { hidden: vec![4, 4], ..FieldModelSpec::new(2, f, 4.0) };
        let mut d = DirectIdm::new(DirectSpec::matched(DirectVariant::FramePair, &field, 8, 0.12), 0).unwrap();
        let readout = d.spec.fusion_width * 2 + 2;
        let total = d.params.len();
        d.params[total - readout..].iter_mut().for_each(|p| *p = 0.0);
        let m = Model::Direct(d);
        let mse = eval_action_mse(&m, &ds.records, 1e-3, 0.12).unwrap();
        // E[(u/δ)²] = 1/3 for u ~ U(-δ, δ); 2000 records, 4000 coordinates:
        // std of the mean ≈ sqrt(4/45 / 4000) ≈ 0.0047.
        assert!((mse - 1.0 / 3.0).abs() < 0.015, "{mse}");
    }

    #[test]
    fn oracle_field_with_exact_flow_is_exact() {
        let config = ChainConfig::tapered(3, &ChainTaper::default()).unwrap();
        let camera = CameraModel::fit(&config, 48, 48, 32.0).unwrap();
        let q = ChainState::new(vec![0.3, 0.5, -0.4]);
        let a = Action::new(vec![0.05, -0.08, 0.1]);
        let flow = first_order_flow(&config, &camera, &q, &a);
        let field = analytic_field(&config, &camera, &q);
        let sol = aggregate_invert(&field, &flow, &RidgeParams::new(1e-8)).unwrap();
        let rec = vec![sol.delta_a];
        let record = TransitionRecord {
            o_t: crate::render::Image::filled(48, 48, 1, 0.0),
            delta_a: a.delta_a.clone(),
            o_next: crate::render::Image::filled(48, 48, 1, 0.0),
            flow,
            occluded: vec![false; 48 * 48],
            state_q: q.q.clone(),
        };
        // Flow is stored in f32, which bounds the attainable precision.
        assert!(action_mse(&rec, &[record], 0.12).unwrap() < 1e-10);
    }
}
