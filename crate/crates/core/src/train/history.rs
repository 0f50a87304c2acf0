use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];

/// Losses and accuracies measured at the end of one epoch. Validation
/// fields are absent in fine-tune mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

fn fixed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn export_history(stats: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        w.write_record(HISTORY_HEADER)?;
        for s in stats {
            w.write_record([
                s.epoch.to_string(),
                fixed(Some(s.train_loss)),
                fixed(Some(s.train_acc)),
                fixed(s.val_loss),
                fixed(s.val_acc),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochStats>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let bad = |what: &str| Error::Data(format!("{}: bad {what}", path.display()));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<Option<f64>> {
            match row.get(i).map(str::trim) {
                None | Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| bad(HISTORY_HEADER[i])),
            }
        };
        out.push(EpochStats {
            epoch: row[0].parse().map_err(|_| bad("epoch"))?,
            train_loss: num(1)?.ok_or_else(|| bad("train_loss"))?,
            train_acc: num(2)?.ok_or_else(|| bad("train_acc"))?,
            val_loss: num(3)?,
            val_acc: num(4)?,
        });
    }
    Ok(out)
}
