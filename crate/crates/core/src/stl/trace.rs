use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A discrete-time signal: named real channels sampled at a fixed step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    channels: Vec<String>,
    columns: Vec<Vec<f64>>,
    dt: f64,
}

impl Trace {
    pub fn new(channels: Vec<String>, columns: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        if channels.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} channel names for {} columns",
                channels.len(),
                columns.len()
            )));
        }
        let len = columns.first().map(Vec::len).unwrap_or(0);
        if len == 0 {
            return Err(Error::Schema("trace must be nonempty".into()));
        }
        if let Some((name, _)) = channels.iter().zip(&columns).find(|(_, c)| c.len() != len) {
            return Err(Error::Schema(format!("channel `{name}` has inconsistent length")));
        }
        for (i, name) in channels.iter().enumerate() {
            if channels[..i].contains(name) {
                return Err(Error::Schema(format!("duplicate channel `{name}`")));
            }
        }
        Ok(Self { channels, columns, dt })
    }

    /// Single-channel trace, mostly for tests.
    pub fn from_channel(name: &str, values: Vec<f64>, dt: f64) -> Result<Self> {
        Self::new(vec![name.to_string()], vec![values], dt)
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .iter()
            .position(|c| c == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Schema(format!("unknown channel `{name}`")))
    }

    /// Parses the `step,time_s,<channel>...` CSV layout. Empty cells are read
    /// as NaN so that sparse bookkeeping columns do not block loading.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "step" || &headers[1] != "time_s" {
            return Err(Error::Schema(
                "trace header must start with `step,time_s` followed by channels".into(),
            ));
        }
        let channels: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut columns = vec![Vec::new(); channels.len()];
        let mut times = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let line = row + 2;
            if record.len() != headers.len() {
                return Err(Error::Parse { line, msg: "wrong number of fields".into() });
            }
            let step: usize = record[0]
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad step `{}`", &record[0]) })?;
            if step != row {
                return Err(Error::Parse { line, msg: format!("expected step {row}, got {step}") });
            }
            let t: f64 = record[1]
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad time `{}`", &record[1]) })?;
            times.push(t);
            for (col, cell) in columns.iter_mut().zip(record.iter().skip(2)) {
                let v = if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad value `{cell}`"),
                    })?
                };
                col.push(v);
            }
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Self::new(channels, columns, dt)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["step".to_string(), "time_s".to_string()];
        header.extend(self.channels.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![i.to_string(), format!("{}", i as f64 * self.dt)];
            row.extend(self.columns.iter().map(|c| format_cell(c[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}
