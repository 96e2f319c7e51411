//! Minimal RIFF/WAV reader and writer, 16-bit PCM only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AudioBuffer, DspError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Left,
    Right,
    /// Average of all channels.
    Mix,
}

fn read_u32(buf: &[u8], at: usize) -> Result<u32, DspError> {
    let b = buf.get(at..at + 4).ok_or(DspError::Truncated)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_u16(buf: &[u8], at: usize) -> Result<u16, DspError> {
    let b = buf.get(at..at + 2).ok_or(DspError::Truncated)?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

/// Loads a 16-bit PCM WAV as mono (averaging channels when stereo).
pub fn load_wav<P: AsRef<Path>>(path: P) -> Result<AudioBuffer, DspError> {
    load_wav_channel(path, Channel::Mix)
}

/// Loads a 16-bit PCM WAV, selecting a channel for multi-channel files.
///
/// Samples are scaled by 1/32768 so full-scale positive PCM maps to just
/// under +1.0.
pub fn load_wav_channel<P: AsRef<Path>>(path: P, channel: Channel) -> Result<AudioBuffer, DspError> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    if buf.len() < 12 || &buf[0..4] != b"RIFF" || &buf[8..12] != b"WAVE" {
        return Err(DspError::UnsupportedWav("not a RIFF/WAVE file".into()));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= buf.len() {
        let id = &buf[pos..pos + 4];
        let size = read_u32(&buf, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                let format = read_u16(&buf, body)?;
                let channels = read_u16(&buf, body + 2)?;
                let rate = read_u32(&buf, body + 4)?;
                let bits = read_u16(&buf, body + 14)?;
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        // chunks are word-aligned
        pos = body + size + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or(DspError::Truncated)?;
    if format != 1 || bits != 16 {
        return Err(DspError::UnsupportedWav(format!(
            "format tag {format}, {bits} bits (need PCM 16)"
        )));
    }
    if channels == 0 || channels > 2 {
        return Err(DspError::UnsupportedWav(format!("{channels} channels")));
    }
    let (start, size) = data.ok_or(DspError::Truncated)?;
    if start + size > buf.len() {
        return Err(DspError::Truncated);
    }
    let n_frames = size / 2 / channels as usize;
    if n_frames == 0 {
        return Err(DspError::EmptyAudio);
    }

    let ch = channels as usize;
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let frame = start + f * 2 * ch;
        let get = |c: usize| {
            let v = i16::from_le_bytes([buf[frame + 2 * c], buf[frame + 2 * c + 1]]);
            v as f32 / 32768.0
        };
        let s = match (channel, ch) {
            (_, 1) => get(0),
            (Channel::Left, _) => get(0),
            (Channel::Right, _) => get(1),
            (Channel::Mix, _) => 0.5 * (get(0) + get(1)),
        };
        samples.push(s);
    }
    AudioBuffer::new(samples, rate)
}

/// Writes mono 16-bit PCM, clamping to full scale.
pub fn write_wav<P: AsRef<Path>>(path: P, audio: &AudioBuffer) -> Result<(), DspError> {
    let n = audio.samples.len();
    let data_size = (n * 2) as u32;
    let rate = audio.sample_rate;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_size).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&rate.to_le_bytes())?;
    w.write_all(&(rate * 2).to_le_bytes())?; // byte rate
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_size.to_le_bytes())?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
