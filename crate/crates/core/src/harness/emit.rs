use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Format, ResultRow};
use crate::error::{Error, Result};
use crate::gradcheck::GradRow;

pub const CSV_HEADER: &str = "preset,scheme,sweep,trial,seed,wsr_bits,gamma_s,ps_db,iters,wall_ms";
pub const GRADCHECK_HEADER: &str = "gradient,point,user,coord,analytic,fd,abs_err,rel_err,pass,h";

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) }
}

/// Writes result rows as CSV (fixed header, written even when empty) or as
/// a JSON array.
pub fn write_rows<W: Write>(rows: &[ResultRow], mut out: W, format: Format) -> std::io::Result<()> {
    match format {
        Format::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            for r in rows {
                w.serialize(r).map_err(std::io::Error::other)?;
            }
            w.flush()
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
            out.flush()
        }
    }
}

pub fn write_gradcheck<W: Write>(rows: &[GradRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{GRADCHECK_HEADER}")?;
    for r in rows {
        let x = &r.report;
        writeln!(
            out,
            "{},{},{},{},{:e},{:e},{:e},{:e},{},{:e}",
            r.gradient.name(),
            r.point,
            r.user,
            x.coord,
            x.analytic,
            x.fd,
            x.abs_err,
            x.rel_err,
            x.pass,
            x.h
        )?;
    }
    out.flush()
}

pub fn emit(rows: &[ResultRow], path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(io(path))?;
    write_rows(rows, BufWriter::new(file), format).map_err(io(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>().map_err(csv_err(path))
}

pub fn emit_gradcheck(rows: &[GradRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io(path))?;
    write_gradcheck(rows, BufWriter::new(file)).map_err(io(path))
}
