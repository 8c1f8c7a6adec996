//! One tab-separated file per channel: `<dir>/<channel>.tsv`.
//!
//! ```text
//! # channel=heart-rate unit=bpm rate_hz=1 format_version=1
//! 0	70
//! 1	70.5
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{ChannelBuffer, FeedbackChannels, FeedbackError, Modality};

pub const CHANNEL_FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> FeedbackError {
    FeedbackError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_channels(dir: &Path, channels: &FeedbackChannels) -> Result<(), FeedbackError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (m, buf) in &channels.channels {
        let spec = m.spec();
        let rate = spec.rate_hz.map_or("event".to_string(), |r| r.to_string());
        let mut text = format!(
            "# channel={} unit={} rate_hz={rate} format_version={CHANNEL_FORMAT_VERSION}\n",
            spec.name, spec.unit
        );
        for (t, v) in buf.times.iter().zip(&buf.values) {
            let _ = writeln!(text, "{t}\t{v}");
        }
        let path = dir.join(format!("{}.tsv", spec.name));
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Reads every `<channel>.tsv` in `dir` whose stem names a known channel.
pub fn read_channels(dir: &Path) -> Result<FeedbackChannels, FeedbackError> {
    let mut out = FeedbackChannels::default();
    for m in Modality::ALL {
        let path = dir.join(format!("{}.tsv", m.name()));
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let fmt_err = |line: usize, msg: String| FeedbackError::Format {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut buf = ChannelBuffer::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (t, v) = line
                .split_once('\t')
                .ok_or_else(|| fmt_err(i + 1, "expected `timestamp<TAB>value`".into()))?;
            let t: f64 = t.trim().parse().map_err(|_| fmt_err(i + 1, format!("bad timestamp {t:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| fmt_err(i + 1, format!("bad value {v:?}")))?;
            if buf.times.last().is_some_and(|&p| t <= p) {
                return Err(fmt_err(i + 1, "timestamps must increase".into()));
            }
            m.check_value(v).map_err(|msg| fmt_err(i + 1, msg))?;
            buf.push(t, v);
        }
        out.insert(m, buf);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{generate_physiology, PhysioParams};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ch = generate_physiology(&[], 3.0, &PhysioParams::default(), 1, 0.7).unwrap();
        write_channels(dir.path(), &ch).unwrap();
        assert_eq!(read_channels(dir.path()).unwrap(), ch);
    }

    #[test]
    fn malformed_line_is_reported_with_position() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("eda.tsv"), "# channel=eda\n0\t0.5\n0.25 0.5\n").unwrap();
        match read_channels(dir.path()) {
            Err(FeedbackError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
