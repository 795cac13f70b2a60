//! Spectrum CSV files.
//!
//! ```text
//! # springnoise spectrum v1
//! # kind: psd
//! # name: s0
//! # units: m^2/Hz
//! # n_averages: 4096
//! freq_hz,value,imag_value,uncertainty,mask_flags
//! 5.12e2,1.2345e-30,,3.1e-32,0
//! ```
//!
//! Floats are written in Rust's shortest round-trip exponent form, so a file
//! re-imports to a bit-identical spectrum. `imag_value` is empty for PSDs and
//! `uncertainty` is empty when the spectrum has none.

use std::path::Path;

use num_complex::Complex64;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::spectrum::{CrossSpectrum, MaskFlags, Spectrum, Units};

const MAGIC_LINE: &str = "# springnoise spectrum v1";
const COLUMNS: [&str; 5] = ["freq_hz", "value", "imag_value", "uncertainty", "mask_flags"];

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumFile {
    Psd(Spectrum),
    Cpsd(CrossSpectrum),
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn header(kind: &str, name: &str, units: Units, n_averages: u64) -> String {
    format!(
        "{MAGIC_LINE}\n# kind: {kind}\n# name: {name}\n# units: {}\n# n_averages: {n_averages}\n",
        units.tag()
    )
}

fn write_rows(mut out: Vec<u8>, rows: impl Iterator<Item = [String; 5]>) -> Result<Vec<u8>> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(COLUMNS).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::CorruptData(format!("csv: {e}"))
}

pub fn spectrum_to_csv(spec: &Spectrum, name: &str) -> Result<String> {
    let out = header("psd", name, spec.units, spec.n_averages).into_bytes();
    let rows = (0..spec.len()).map(|i| {
        [
            num(spec.freq[i]),
            num(spec.values[i]),
            String::new(),
            spec.uncertainty.as_ref().map(|u| num(u[i])).unwrap_or_default(),
            spec.mask[i].bits().to_string(),
        ]
    });
    Ok(String::from_utf8(write_rows(out, rows)?).expect("ascii output"))
}

pub fn cross_spectrum_to_csv(spec: &CrossSpectrum, name: &str) -> Result<String> {
    let out = header("cpsd", name, spec.units, spec.n_averages).into_bytes();
    let rows = (0..spec.len()).map(|i| {
        [
            num(spec.freq[i]),
            num(spec.values[i].re),
            num(spec.values[i].im),
            spec.uncertainty.as_ref().map(|u| num(u[i])).unwrap_or_default(),
            spec.mask[i].bits().to_string(),
        ]
    });
    Ok(String::from_utf8(write_rows(out, rows)?).expect("ascii output"))
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::CorruptData(format!("row {line}: bad {what} `{field}`")))
}

/// Parses a spectrum CSV; returns the spectrum and its name.
pub fn spectrum_from_csv(text: &str) -> Result<(SpectrumFile, String)> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(MAGIC_LINE) {
        return Err(Error::CorruptData("not a springnoise spectrum file".into()));
    }
    let mut kind = None;
    let mut name = String::new();
    let mut units = None;
    let mut n_averages = None;
    for line in text.lines().skip(1).take_while(|l| l.starts_with('#')) {
        let Some((key, value)) = line.trim_start_matches('#').split_once(':') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "kind" => kind = Some(value.to_string()),
            "name" => name = value.to_string(),
            "units" => {
                units = Some(
                    value
                        .parse::<Units>()
                        .map_err(|_| Error::CorruptData(format!("unknown units `{value}`")))?,
                )
            }
            "n_averages" => {
                n_averages = Some(
                    value
                        .parse::<u64>()
                        .map_err(|_| Error::CorruptData(format!("bad n_averages `{value}`")))?,
                )
            }
            _ => {}
        }
    }
    let units = units.ok_or_else(|| Error::CorruptData("missing units header".into()))?;
    let n_averages = n_averages.ok_or_else(|| Error::CorruptData("missing n_averages header".into()))?;
    let complex = match kind.as_deref() {
        Some("psd") => false,
        Some("cpsd") => true,
        other => return Err(Error::CorruptData(format!("unknown kind {other:?}"))),
    };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != COLUMNS {
        return Err(Error::CorruptData(format!("unexpected columns {headers:?}")));
    }
    let mut freq = Vec::new();
    let mut re = Vec::new();
    let mut im = Vec::new();
    let mut sigma = Vec::new();
    let mut mask = Vec::new();
    let mut have_sigma = None;
    for (row, record) in reader.records().enumerate() {
        let r = record.map_err(csv_err)?;
        if r.len() != 5 {
            return Err(Error::CorruptData(format!("row {row}: expected 5 fields")));
        }
        freq.push(parse_f64(&r[0], "frequency", row)?);
        re.push(parse_f64(&r[1], "value", row)?);
        if complex {
            im.push(parse_f64(&r[2], "imaginary value", row)?);
        }
        let has = !r[3].is_empty();
        if *have_sigma.get_or_insert(has) != has {
            return Err(Error::CorruptData(format!(
                "row {row}: uncertainty present on some rows only"
            )));
        }
        if has {
            sigma.push(parse_f64(&r[3], "uncertainty", row)?);
        }
        mask.push(MaskFlags(r[4].trim().parse().map_err(|_| {
            Error::CorruptData(format!("row {row}: bad mask `{}`", &r[4]))
        })?));
    }
    let sigma = (have_sigma == Some(true)).then_some(sigma);
    let file = if complex {
        let values = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let mut s = CrossSpectrum::new(freq, values, units).map_err(|e| Error::CorruptData(e.to_string()))?;
        s.n_averages = n_averages;
        s.uncertainty = sigma;
        s.mask = mask;
        SpectrumFile::Cpsd(s)
    } else {
        let mut s = Spectrum::new(freq, re, units).map_err(|e| Error::CorruptData(e.to_string()))?;
        s.n_averages = n_averages;
        s.uncertainty = sigma;
        s.mask = mask;
        SpectrumFile::Psd(s)
    };
    Ok((file, name))
}

pub fn write_spectrum(path: &Path, spec: &Spectrum, name: &str) -> Result<()> {
    write_atomic(path, spectrum_to_csv(spec, name)?.as_bytes())
}

pub fn write_cross_spectrum(path: &Path, spec: &CrossSpectrum, name: &str) -> Result<()> {
    write_atomic(path, cross_spectrum_to_csv(spec, name)?.as_bytes())
}

pub fn read_spectrum_file(path: &Path) -> Result<(SpectrumFile, String)> {
    spectrum_from_csv(&std::fs::read_to_string(path)?)
}
