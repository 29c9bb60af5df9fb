//! Speech-unit configuration sweep: for every (clusters, layer) pair, fit a
//! codebook, train a unit-to-phone probe on the training split and score
//! the probe's transcripts on held-out clips.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use lipsynth_data::synthetic::{phone_letter, N_PHONES};
use lipsynth_data::{quantise_corpus, Cache, Split, SslSpec};

use crate::asr::{Asr, EchoAsr};
use crate::error::{PipelineError, Result};
use crate::metrics::{normalise_chars, normalise_words, RateAccumulator};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub clusters: Vec<usize>,
    pub layers: Vec<usize>,
    pub ssl: SslSpec,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            clusters: vec![100, 200],
            layers: vec![1, 12, 24],
            ssl: SslSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub clusters: usize,
    pub layer: usize,
    pub wer: f64,
    pub per: f64,
    pub cer: f64,
}

/// Majority phone for every unit, learned from frame-aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitProbe {
    pub phone_of_unit: Vec<u8>,
}

impl UnitProbe {
    /// Unseen units map to silence; ties go to the lower phone id.
    pub fn fit(k: usize, pairs: &[(&[usize], &[u8])]) -> Self {
        let mut counts: Vec<BTreeMap<u8, usize>> = vec![BTreeMap::new(); k];
        for (units, phones) in pairs {
            for (&u, &p) in units.iter().zip(phones.iter()) {
                *counts[u].entry(p).or_default() += 1;
            }
        }
        let phone_of_unit = counts
            .iter()
            .map(|c| {
                c.iter()
                    .fold((0u8, 0usize), |(bp, bn), (&p, &n)| if n > bn { (p, n) } else { (bp, bn) })
                    .0
            })
            .collect();
        Self { phone_of_unit }
    }

    pub fn decode(&self, units: &[usize]) -> Vec<u8> {
        units.iter().map(|&u| self.phone_of_unit[u]).collect()
    }
}

fn phone_symbol(p: u8) -> char {
    if (p as usize) < N_PHONES {
        phone_letter(p)
    } else {
        char::from_u32(0x41 + p as u32).unwrap_or('?')
    }
}

/// Collapses repeated frame labels and splits words at silence (phone 0).
pub fn render_transcript(frames: &[u8]) -> String {
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut prev = None;
    for &p in frames {
        if prev == Some(p) {
            continue;
        }
        prev = Some(p);
        if p == 0 {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(phone_symbol(p));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words.join(" ")
}

/// Phone tokens of a rendered transcript, one per letter.
fn phone_tokens(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Scores one codebook configuration.
pub fn probe_configuration(cache: &Cache, k: usize, spec: &SslSpec, seed: u64) -> Result<SweepRow> {
    let q = quantise_corpus(cache, k, spec, seed)?;
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    for (c, u) in q.clips.iter().zip(&q.units) {
        let phones = c.phones.as_deref().ok_or_else(|| {
            PipelineError::InvalidInput(format!("clip `{}` has no frame-level phone labels", c.id))
        })?;
        if phones.len() != u.len() {
            return Err(PipelineError::InvalidInput(format!(
                "clip `{}`: {} phone labels for {} frames",
                c.id,
                phones.len(),
                u.len()
            )));
        }
        if c.split == Split::Train {
            train.push((u.as_slice(), phones));
        } else {
            held_out.push((c.id.clone(), u.as_slice(), phones));
        }
    }
    if train.is_empty() || held_out.is_empty() {
        return Err(PipelineError::InvalidInput(
            "the sweep needs both training and held-out clips".into(),
        ));
    }
    let probe = UnitProbe::fit(k, &train);
    let asr = EchoAsr::new(
        held_out
            .iter()
            .map(|(id, u, _)| (id.clone(), render_transcript(&probe.decode(u))))
            .collect(),
    );
    let (mut w, mut c, mut p) = (
        RateAccumulator::default(),
        RateAccumulator::default(),
        RateAccumulator::default(),
    );
    for (id, _, phones) in &held_out {
        let reference = render_transcript(phones);
        if reference.is_empty() {
            continue;
        }
        let hyp = asr.transcribe(id, &[])?;
        w.add(&normalise_words(&hyp), &normalise_words(&reference))?;
        c.add(&normalise_chars(&hyp), &normalise_chars(&reference))?;
        p.add(&phone_tokens(&hyp), &phone_tokens(&reference))?;
    }
    let rate = |a: RateAccumulator| {
        a.rate()
            .ok_or_else(|| PipelineError::InvalidInput("held-out clips contain no speech".into()))
    };
    Ok(SweepRow {
        clusters: k,
        layer: spec.layer,
        wer: rate(w)?,
        per: rate(p)?,
        cer: rate(c)?,
    })
}

pub fn sweep_units(cache: &Cache, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &k in &cfg.clusters {
        for &layer in &cfg.layers {
            log::info!("sweep: {k} clusters, layer {layer}");
            let spec = SslSpec {
                layer,
                ..cfg.ssl.clone()
            };
            rows.push(probe_configuration(cache, k, &spec, cfg.seed)?);
        }
    }
    Ok(rows)
}

pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("#clusters | layer | WER | PER | CER\n");
    for r in rows {
        s.push_str(&format!(
            "{} | {} | {:.2} | {:.2} | {:.2}\n",
            r.clusters, r.layer, r.wer, r.per, r.cer
        ));
    }
    s
}
