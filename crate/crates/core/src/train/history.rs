use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub iou: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub secs: f64,
}

impl EpochRecord {
    /// `epoch <n> loss <f> iou <f> lr <f> secs <f>`.
    pub fn line(&self) -> String {
        format!(
            "epoch {} loss {:.6} iou {:.6} lr {:e} secs {:.3}",
            self.epoch, self.loss, self.iou, self.lr, self.secs
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed history line {line:?}"));
        let f: Vec<&str> = line.split_whitespace().collect();
        match f[..] {
            ["epoch", e, "loss", l, "iou", i, "lr", r, "secs", s] => Ok(Self {
                epoch: e.parse().map_err(|_| bad())?,
                loss: l.parse().map_err(|_| bad())?,
                iou: i.parse().map_err(|_| bad())?,
                lr: r.parse().map_err(|_| bad())?,
                secs: s.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            writeln!(s, "{}", r.line()).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(EpochRecord::parse)
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// The history with wall-clock times zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            records: self.records.iter().map(|r| EpochRecord { secs: 0.0, ..*r }).collect(),
        }
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if r.iou <= b.iou => Some(b),
                _ => Some(r),
            })
    }

    pub fn final_iou(&self) -> Option<f64> {
        self.records.last().map(|r| r.iou)
    }
}
