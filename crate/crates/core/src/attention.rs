//! Cross-series attention: score every member representation against a
//! query, softmax the scores, form the context vector and project
//! `[query; context]` through `tanh(W_a ·)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamId, ParamStore, Tape, Var};

/// Similarity function between the query and a key.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreFn {
    /// `qᵀ k`, parameter-free.
    #[default]
    Dot,
    /// `qᵀ W_s k` with a trainable `hidden x hidden` matrix.
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `out_width x 2·hidden_width`.
    pub w_a: ParamId,
    pub w_score: Option<ParamId>,
    pub hidden_width: usize,
    pub out_width: usize,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        score: ScoreFn,
        hidden_width: usize,
        out_width: usize,
        rng: &mut R,
    ) -> Self {
        let w_a = store.add_glorot(format!("{prefix}.w_a"), out_width, 2 * hidden_width, rng);
        let w_score = match score {
            ScoreFn::Dot => None,
            ScoreFn::General => Some(store.add_glorot(
                format!("{prefix}.w_score"),
                hidden_width,
                hidden_width,
                rng,
            )),
        };
        Self {
            w_a,
            w_score,
            hidden_width,
            out_width,
        }
    }

    pub fn score_fn(&self) -> ScoreFn {
        if self.w_score.is_some() {
            ScoreFn::General
        } else {
            ScoreFn::Dot
        }
    }

    pub fn scalar_count(score: ScoreFn, hidden: usize, out: usize) -> usize {
        let bilinear = match score {
            ScoreFn::Dot => 0,
            ScoreFn::General => hidden * hidden,
        };
        out * 2 * hidden + bilinear
    }
}

/// Dot-product score of two column vectors.
pub fn score(h_t: &Matrix, h_bar: &Matrix) -> Result<f64> {
    h_t.check_same_shape(h_bar, "score")?;
    Ok(h_t.as_slice().iter().zip(h_bar.as_slice()).map(|(a, b)| a * b).sum())
}

/// Softmax of a score list, stabilized by max-subtraction.
pub fn attention_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::contract("attention over an empty score list"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite attention score".into()));
    }
    let w = crate::numcore::softmax_columns(&Matrix::column(scores));
    Ok(w.into_vec())
}

/// Output of one attention head on a mini-batch.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `out_width x batch`.
    pub output: Var,
    /// `m x batch`; column `b` holds the weights over the `m` keys.
    pub weights: Var,
    /// `hidden x batch`.
    pub context: Var,
}

pub fn attend(tape: &mut Tape, query: Var, keys: &[Var], p: &AttentionParams) -> Result<Attended> {
    if keys.is_empty() {
        return Err(Error::contract("attend: empty key set"));
    }
    let qs = tape.value(query).shape();
    if qs.0 != p.hidden_width {
        return Err(Error::Shape {
            op: "attend",
            left: qs,
            right: (p.hidden_width, qs.1),
        });
    }
    let mut scores = Vec::with_capacity(keys.len());
    for &k in keys {
        let s = match p.w_score {
            None => tape.col_dot(query, k)?,
            Some(ws) => {
                let wk = tape.matmul(tape.param(ws), k)?;
                tape.col_dot(query, wk)?
            }
        };
        scores.push(s);
    }
    let stacked = tape.vstack(&scores)?;
    let weights = tape.softmax_cols(stacked);
    let mut terms = Vec::with_capacity(keys.len());
    for (s, &k) in keys.iter().enumerate() {
        let alpha = tape.rows(weights, s, 1)?;
        terms.push(tape.scale_cols(k, alpha)?);
    }
    let context = tape.sum(&terms)?;
    let joined = tape.vstack(&[query, context])?;
    let z = tape.matmul(tape.param(p.w_a), joined)?;
    let output = tape.tanh(z);
    Ok(Attended {
        output,
        weights,
        context,
    })
}
