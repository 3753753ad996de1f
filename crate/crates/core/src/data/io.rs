use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, ObservedEntry};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("{what} `{tok}` is not an integer")))
}

fn one_based(value: usize, line: usize, what: &str) -> Result<usize> {
    value
        .checked_sub(1)
        .ok_or_else(|| parse_err(line, format!("{what} ids start at 1")))
}

/// Reads ratings in the MovieLens `u.data` layout: `user item rating
/// timestamp`, whitespace separated. Ratings of 4 and 5 become `+1`, 1 to 3
/// become `-1`. Dimensions are the largest user and item ids seen.
pub fn read_movielens<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut entries = Vec::new();
    let (mut m1, mut m2) = (0, 0);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let user: usize = field(toks.next(), no, "user")?;
        let item: usize = field(toks.next(), no, "item")?;
        let rating: i64 = field(toks.next(), no, "rating")?;
        let _: i64 = field(toks.next(), no, "timestamp")?;
        if toks.next().is_some() {
            return Err(parse_err(no, "expected 4 fields"));
        }
        if !(1..=5).contains(&rating) {
            return Err(parse_err(no, format!("rating {rating} outside 1..5")));
        }
        let row = one_based(user, no, "user")?;
        let col = one_based(item, no, "item")?;
        m1 = m1.max(user);
        m2 = m2.max(item);
        entries.push(ObservedEntry::new(row, col, if rating >= 4 { 1 } else { -1 }));
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(m1, m2, entries)
}

pub fn parse_movielens(path: impl AsRef<Path>) -> Result<Dataset> {
    read_movielens(BufReader::new(File::open(path)?))
}

/// Writes the text format: a `m1 m2 n` header, then one `i j y` line per
/// entry with 1-based indices.
pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{} {} {}", data.m1(), data.m2(), data.len())?;
    for e in data.entries() {
        writeln!(w, "{} {} {}", e.row + 1, e.col + 1, e.label)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let (m1, m2, n) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(parse_err(1, "missing `m1 m2 n` header"));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let no = idx + 1;
        let header: (usize, usize, usize) = (
            field(toks.next(), no, "m1")?,
            field(toks.next(), no, "m2")?,
            field(toks.next(), no, "n")?,
        );
        if toks.next().is_some() {
            return Err(parse_err(no, "header has more than 3 fields"));
        }
        break header;
    };
    let mut entries = Vec::with_capacity(n);
    let mut last = 1;
    for (idx, line) in lines {
        let line = line?;
        let no = idx + 1;
        last = no;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let i: usize = field(toks.next(), no, "row")?;
        let j: usize = field(toks.next(), no, "column")?;
        let y: i8 = field(toks.next(), no, "label")?;
        if toks.next().is_some() {
            return Err(parse_err(no, "expected 3 fields"));
        }
        if y != 1 && y != -1 {
            return Err(parse_err(no, format!("label {y} is not -1 or 1")));
        }
        let (row, col) = (one_based(i, no, "row")?, one_based(j, no, "column")?);
        if row >= m1 || col >= m2 {
            return Err(parse_err(no, format!("entry ({i}, {j}) outside {m1}x{m2}")));
        }
        entries.push(ObservedEntry::new(row, col, y));
    }
    if entries.len() != n {
        return Err(parse_err(last, format!("header promises {n} entries, found {}", entries.len())));
    }
    Dataset::new(m1, m2, entries)
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(data, File::create(path)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
