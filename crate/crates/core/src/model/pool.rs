//! Materialized training-frame pool.
//!
//! All CQT frames of the corpus (plus octave-shifted and noise-mixed
//! variants when requested) are computed up front, so batches can mix
//! frames from arbitrary tracks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{compute_cqt, mix_at_snr, pitch_shift_octaves, AudioBuffer, CqtParams, SLICE_BINS};
use crate::synth::{pink_noise, CorpusItem};

use super::{ModelError, SpiceConfig};

/// One full CQT frame (all bins), with its label and provenance.
pub struct PooledFrame {
    pub values: Vec<f32>,
    /// CQT frame of the same audio mixed with noise, when noisy training
    /// is enabled.
    pub noisy: Option<Vec<f32>>,
    /// Voiced fundamental in Hz (after any octave shift), if labeled.
    pub f0_hz: Option<f64>,
    /// Corpus item this frame came from, for held-out splits.
    pub item: usize,
}

pub struct FramePool {
    pub frames: Vec<PooledFrame>,
    pub n_bins: usize,
}

impl FramePool {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Slice `[k, k+128)` of frame `i`.
    pub fn slice(&self, i: usize, k: usize) -> &[f32] {
        &self.frames[i].values[k..k + SLICE_BINS]
    }

    pub fn slice_noisy(&self, i: usize, k: usize) -> &[f32] {
        &self.frames[i].noisy.as_ref().expect("noisy frames present")[k..k + SLICE_BINS]
    }
}

fn push_item_frames(
    pool: &mut Vec<PooledFrame>,
    audio: &AudioBuffer,
    labels: &[Option<f64>],
    label_scale: f64,
    label_stride: f64,
    item: usize,
    params: &CqtParams,
    noisy: Option<(&mut ChaCha8Rng, (f64, f64))>,
) -> Result<(), ModelError> {
    let cqt = compute_cqt(audio, params)?;
    let noisy_cqt = match noisy {
        Some((rng, snr)) => {
            let n = pink_noise(rng, audio.len());
            let noise = AudioBuffer::new(n, audio.sample_rate)?;
            let snr_db = rng.gen_range(snr.0..=snr.1);
            let mixed = mix_at_snr(audio, &noise, snr_db)?;
            Some(compute_cqt(&mixed, params)?)
        }
        None => None,
    };
    for t in 0..cqt.n_frames {
        // map this frame back onto the original label grid (octave shifts
        // change the time base by 2^n)
        let li = (t as f64 * label_stride).round() as usize;
        let f0 = labels.get(li).copied().flatten().map(|f| f * label_scale);
        pool.push(PooledFrame {
            values: cqt.frame(t).to_vec(),
            noisy: noisy_cqt.as_ref().map(|m| m.frame(t).to_vec()),
            f0_hz: f0,
            item,
        });
    }
    Ok(())
}

/// Computes the pool for a corpus. Octave augmentation adds up- and
/// down-shifted copies of every track; noisy training attaches a
/// pink-noise-mixed CQT to every frame.
pub fn build_frame_pool(
    items: &[CorpusItem],
    cfg: &SpiceConfig,
) -> Result<FramePool, ModelError> {
    let params = &cfg.cqt;
    let mut frames = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e01_5e00);
    for (idx, item) in items.iter().enumerate() {
        let shifts: &[i32] = if cfg.augment_octaves {
            &[-1, 0, 1]
        } else {
            &[0]
        };
        for &n in shifts {
            let audio = pitch_shift_octaves(&item.audio, n)?;
            let scale = 2f64.powi(n);
            push_item_frames(
                &mut frames,
                &audio,
                &item.labels,
                scale,
                scale,
                idx,
                params,
                cfg.noisy_training.then_some((&mut rng, cfg.snr_db)),
            )?;
        }
    }
    if frames.is_empty() {
        return Err(ModelError::EmptyPool);
    }
    Ok(FramePool {
        frames,
        n_bins: params.n_bins,
    })
}
