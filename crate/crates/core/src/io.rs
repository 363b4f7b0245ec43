//! Text formats: symmetric matrix TSV, subspace files, panel and sample-size TSVs,
//! pairing reports, scenario configs and PGM heatmaps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;

use crate::biascorr::SampleSizes;
use crate::error::{Error, Result};
use crate::estimators::FreqPanel;
use crate::lsfit::MatrixSubspace;
use crate::pairing::PairingOutcome;
use crate::symcore::SymMat;
use crate::treesim::{RootFreqLaw, ScenarioParams, SimConfig};

fn open_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    BufReader::new(reader)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_symmat<W: Write>(out: &mut W, a: &SymMat) -> std::io::Result<()> {
    writeln!(out, "# symmat m={}", a.dim())?;
    for row in a.to_rows() {
        let cells: Vec<String> = row.into_iter().map(format_value).collect();
        writeln!(out, "{}", cells.join("\t"))?;
    }
    Ok(())
}

pub fn write_symmat_file(path: &Path, a: &SymMat) -> Result<()> {
    let mut out = create(path)?;
    write_symmat(&mut out, a)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn parse_header_value(header: &str, key: &str) -> Option<usize> {
    header
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

/// Parses one `# symmat` block starting at `lines[start]` (1-based numbering for errors).
fn parse_symmat_block(name: &str, lines: &[String], start: usize) -> Result<(SymMat, usize)> {
    let header = lines[start].trim();
    if !header.starts_with("# symmat") {
        return Err(Error::parse(
            name,
            start + 1,
            "expected '# symmat m=<dim>' header",
        ));
    }
    let m = parse_header_value(header, "m")
        .ok_or_else(|| Error::parse(name, start + 1, "header lacks m=<dim>"))?;
    let mut rows = Vec::with_capacity(m);
    for r in 0..m {
        let idx = start + 1 + r;
        let line = lines.get(idx).ok_or_else(|| {
            Error::parse(
                name,
                idx + 1,
                format!("expected {m} matrix rows, found {r}"),
            )
        })?;
        let row = line
            .split('\t')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(name, idx + 1, format!("bad number: {e}")))?;
        if row.len() != m {
            return Err(Error::parse(
                name,
                idx + 1,
                format!("expected {m} columns, found {}", row.len()),
            ));
        }
        rows.push(row);
    }
    let mat = SymMat::from_rows(&rows).map_err(|e| Error::parse(name, start + 1, e.to_string()))?;
    Ok((mat, start + 1 + m))
}

pub fn read_symmat_file(path: &Path) -> Result<SymMat> {
    let lines = open_lines(path)?;
    let name = display(path);
    let first = lines
        .iter()
        .position(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::parse(&name, 1, "empty matrix file"))?;
    let (mat, next) = parse_symmat_block(&name, &lines, first)?;
    if let Some(extra) = lines[next..].iter().position(|l| !l.trim().is_empty()) {
        return Err(Error::parse(
            &name,
            next + extra + 1,
            "trailing content after matrix",
        ));
    }
    Ok(mat)
}

pub fn write_subspace_file(path: &Path, basis: &[SymMat]) -> Result<()> {
    let m = basis.first().map_or(0, SymMat::dim);
    let mut out = create(path)?;
    let res = (|| {
        writeln!(out, "# basis k={} m={}", basis.len(), m)?;
        for (i, b) in basis.iter().enumerate() {
            if i > 0 {
                writeln!(out)?;
            }
            write_symmat(&mut out, b)?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Reads a subspace file. The basis is pruned to a linearly independent set.
pub fn read_subspace_file(path: &Path) -> Result<MatrixSubspace> {
    let lines = open_lines(path)?;
    let name = display(path);
    let header_at = lines
        .iter()
        .position(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::parse(&name, 1, "empty subspace file"))?;
    let header = lines[header_at].trim();
    if !header.starts_with("# basis") {
        return Err(Error::parse(
            &name,
            header_at + 1,
            "expected '# basis k=<count> m=<dim>' header",
        ));
    }
    let k = parse_header_value(header, "k")
        .ok_or_else(|| Error::parse(&name, header_at + 1, "header lacks k=<count>"))?;
    let m = parse_header_value(header, "m")
        .ok_or_else(|| Error::parse(&name, header_at + 1, "header lacks m=<dim>"))?;
    let mut basis = Vec::with_capacity(k);
    let mut pos = header_at + 1;
    while basis.len() < k {
        while pos < lines.len() && lines[pos].trim().is_empty() {
            pos += 1;
        }
        if pos >= lines.len() {
            return Err(Error::parse(
                &name,
                pos,
                format!("expected {k} matrices, found {}", basis.len()),
            ));
        }
        let (b, next) = parse_symmat_block(&name, &lines, pos)?;
        if b.dim() != m {
            return Err(Error::parse(
                &name,
                pos + 1,
                format!("matrix has m={}, header says m={m}", b.dim()),
            ));
        }
        basis.push(b);
        pos = next;
    }
    if let Some(extra) = lines[pos..].iter().position(|l| !l.trim().is_empty()) {
        return Err(Error::parse(&name, pos + extra + 1, "more matrices than k"));
    }
    MatrixSubspace::spanned_by(m, basis)
}

struct Table {
    header: Vec<String>,
    /// `(line number, snp id, chrom, cells)`.
    rows: Vec<(usize, String, Option<String>, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let lines = open_lines(path)?;
    let name = display(path);
    let mut iter = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header_line) = iter.next().ok_or(Error::EmptyPanel)?;
    let header: Vec<String> = header_line
        .split('\t')
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 3 || header[0] != "snp_id" || header[1] != "chrom" {
        return Err(Error::parse(
            &name,
            1,
            "header must be 'snp_id<TAB>chrom<TAB><pop1>...'",
        ));
    }
    let n_cols = header.len();
    let mut rows = Vec::new();
    for (idx, line) in iter {
        let cells: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cells.len() != n_cols {
            return Err(Error::parse(
                &name,
                idx + 1,
                format!("expected {n_cols} columns, found {}", cells.len()),
            ));
        }
        let chrom = match cells[1] {
            "." | "" => None,
            c => Some(c.to_string()),
        };
        rows.push((
            idx + 1,
            cells[0].to_string(),
            chrom,
            cells[2..].iter().map(|s| s.to_string()).collect(),
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyPanel);
    }
    Ok(Table { header, rows })
}

/// Reads a panel TSV (`.gz` accepted). Missing values are rejected.
pub fn read_panel(path: &Path) -> Result<FreqPanel> {
    let name = display(path);
    let table = read_table(path)?;
    let m = table.header.len() - 2;
    let mut values = Vec::with_capacity(table.rows.len() * m);
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut chrom = Vec::with_capacity(table.rows.len());
    for (line, id, c, cells) in table.rows {
        for (j, cell) in cells.iter().enumerate() {
            let x: f64 = cell.parse().map_err(|_| {
                let what = if cell.is_empty() || cell == "." || cell.eq_ignore_ascii_case("na") {
                    "missing value".to_string()
                } else {
                    format!("bad number '{cell}'")
                };
                Error::parse(
                    &name,
                    line,
                    format!("{what} for population {}", table.header[j + 2]),
                )
            })?;
            if !x.is_finite() {
                return Err(Error::parse(
                    &name,
                    line,
                    format!("non-finite value for population {}", table.header[j + 2]),
                ));
            }
            values.push(x);
        }
        ids.push(id);
        chrom.push(c);
    }
    FreqPanel::new(m, values, ids, chrom, table.header[2..].to_vec())
}

pub fn write_panel(path: &Path, panel: &FreqPanel) -> Result<()> {
    let mut out = create(path)?;
    let res = (|| {
        writeln!(out, "snp_id\tchrom\t{}", panel.pop_names().join("\t"))?;
        for k in 0..panel.n_snps() {
            write!(
                out,
                "{}\t{}",
                panel.snp_ids()[k],
                panel.chrom()[k].as_deref().unwrap_or(".")
            )?;
            for x in panel.row(k) {
                write!(out, "\t{x}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Reads a sample-size TSV whose SNP ids and population columns match `panel`.
pub fn read_sizes(path: &Path, panel: &FreqPanel) -> Result<SampleSizes> {
    let name = display(path);
    let table = read_table(path)?;
    if table.header[2..] != *panel.pop_names() {
        return Err(Error::parse(
            &name,
            1,
            "population columns differ from the panel",
        ));
    }
    if table.rows.len() != panel.n_snps() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows in sizes file, {} in panel",
            table.rows.len(),
            panel.n_snps()
        )));
    }
    let mut sizes = Vec::with_capacity(panel.n_snps() * panel.n_pops());
    for (k, (line, id, _, cells)) in table.rows.iter().enumerate() {
        if *id != panel.snp_ids()[k] {
            return Err(Error::parse(
                &name,
                *line,
                format!("SNP '{id}' where the panel has '{}'", panel.snp_ids()[k]),
            ));
        }
        for cell in cells {
            let n: u32 = cell.parse().map_err(|_| {
                Error::parse(
                    &name,
                    *line,
                    format!("sample size must be an integer, found '{cell}'"),
                )
            })?;
            sizes.push(n);
        }
    }
    let sizes = SampleSizes::new(panel.n_pops(), sizes)?;
    sizes.validate_for(panel)?;
    Ok(sizes)
}

pub fn write_sizes(path: &Path, panel: &FreqPanel, sizes: &SampleSizes) -> Result<()> {
    let mut out = create(path)?;
    let res = (|| {
        writeln!(out, "snp_id\tchrom\t{}", panel.pop_names().join("\t"))?;
        for k in 0..panel.n_snps() {
            let cells: Vec<String> = sizes.row(k).iter().map(u32::to_string).collect();
            writeln!(
                out,
                "{}\t{}\t{}",
                panel.snp_ids()[k],
                panel.chrom()[k].as_deref().unwrap_or("."),
                cells.join("\t")
            )?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn write_pairing_report(
    path: &Path,
    panel: &FreqPanel,
    outcome: &PairingOutcome,
) -> Result<()> {
    let mut out = create(path)?;
    let chrom = |k: usize| panel.chrom()[k].as_deref().unwrap_or(".");
    let res = (|| {
        writeln!(out, "pair_idx\tsnp_a\tchrom_a\tsnp_b\tchrom_b")?;
        for (p, &(a, b)) in outcome.pairing.pairs().iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                p + 1,
                panel.snp_ids()[a],
                chrom(a),
                panel.snp_ids()[b],
                chrom(b)
            )?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Parsed scenario file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub params: ScenarioParams,
    pub sim: SimConfig,
    /// When set, the simulated panel is binomially sampled with this many individuals.
    pub sample_size: Option<u32>,
}

/// Parses `key=value` lines. Keys: `m, T, B, factor, n, seed, t_block, x0, clamp,
/// n_chrom, sample_size`. `#` starts a comment.
pub fn parse_scenario(text: &str, name: &str) -> Result<ScenarioConfig> {
    let mut params = ScenarioParams::short_branch(5);
    let mut sim = SimConfig::new(100_000, 1);
    let mut sample_size = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::parse(name, idx + 1, msg);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, found '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}'"))
        }
        let parsed: std::result::Result<(), String> = (|| {
            match key {
                "m" => params.m = num(value)?,
                "T" => params.t_split = num(value)?,
                "B" => params.b_duration = num(value)?,
                "factor" => params.bottleneck_factor = num(value)?,
                "x0" => params.x0_law = value.parse::<RootFreqLaw>().map_err(|e| e.to_string())?,
                "n" => sim.n_snps = num(value)?,
                "seed" => sim.seed = num(value)?,
                "t_block" => sim.block_size = num(value)?,
                "clamp" => sim.clamp = num(value)?,
                "n_chrom" => sim.n_chrom = num(value)?,
                "sample_size" => sample_size = Some(num(value)?),
                other => return Err(format!("unknown key '{other}'")),
            }
            Ok(())
        })();
        parsed.map_err(err)?;
    }
    params.validate()?;
    Ok(ScenarioConfig {
        params,
        sim,
        sample_size,
    })
}

pub fn read_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, &display(path))
}

/// Writes a binary PGM (P5), one `cell x cell` block per entry, scaled min -> 0, max -> 255.
pub fn write_heatmap_pgm(path: &Path, a: &SymMat, cell: usize) -> Result<()> {
    let m = a.dim();
    let cell = cell.max(1);
    let (lo, hi) = a
        .packed()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let span = hi - lo;
    let level = |x: f64| {
        if span > 0.0 {
            ((x - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    };
    let side = m * cell;
    let mut pixels = Vec::with_capacity(side * side);
    for i in 0..m {
        let row: Vec<u8> = (0..m)
            .flat_map(|j| std::iter::repeat_n(level(a.get(i, j)), cell))
            .collect();
        for _ in 0..cell {
            pixels.extend_from_slice(&row);
        }
    }
    let mut out = create(path)?;
    let res = (|| {
        write!(out, "P5\n{side} {side}\n255\n")?;
        out.write_all(&pixels)?;
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn symmat_round_trip_is_exact() {
        let a = SymMat::from_rows(&[vec![0.1, 1.0 / 3.0], vec![1.0 / 3.0, -2e-300]]).unwrap();
        let dir = tmp();
        let p = dir.path().join("a.tsv");
        write_symmat_file(&p, &a).unwrap();
        assert_eq!(read_symmat_file(&p).unwrap(), a);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# symmat m=2\n"));
    }

    #[test]
    fn symmat_reader_rejects_asymmetry_and_short_files() {
        let dir = tmp();
        let p = dir.path().join("bad.tsv");
        std::fs::write(&p, "# symmat m=2\n1\t2\n3\t4\n").unwrap();
        assert!(read_symmat_file(&p).is_err());
        std::fs::write(&p, "# symmat m=2\n1\t2\n").unwrap();
        match read_symmat_file(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subspace_round_trip() {
        let dir = tmp();
        let p = dir.path().join("l.txt");
        let b1 = SymMat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let b2 = SymMat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        write_subspace_file(&p, &[b1.clone(), b2.clone()]).unwrap();
        let l = read_subspace_file(&p).unwrap();
        assert_eq!(l.basis(), &[b1, b2]);
        std::fs::write(&p, "# basis k=2 m=2\n# symmat m=2\n1\t0\n0\t0\n").unwrap();
        assert!(read_subspace_file(&p).is_err());
    }

    #[test]
    fn panel_round_trip_and_gzip() {
        let dir = tmp();
        let text = "snp_id\tchrom\tA\tB\nrs1\t1\t0.1\t0.2\nrs2\t.\t0.3\t0.4\n";
        let p = dir.path().join("p.tsv");
        std::fs::write(&p, text).unwrap();
        let panel = read_panel(&p).unwrap();
        assert_eq!(panel.n_snps(), 2);
        assert_eq!(panel.pop_names(), &["A", "B"]);
        assert_eq!(panel.chrom()[1], None);
        let q = dir.path().join("q.tsv");
        write_panel(&q, &panel).unwrap();
        assert_eq!(read_panel(&q).unwrap(), panel);

        let gz = dir.path().join("p.tsv.gz");
        let mut enc =
            flate2::write::GzEncoder::new(File::create(&gz).unwrap(), flate2::Compression::fast());
        enc.write_all(text.as_bytes()).unwrap();
        enc.finish().unwrap();
        assert_eq!(read_panel(&gz).unwrap(), panel);
    }

    #[test]
    fn panel_errors_carry_line_numbers() {
        let dir = tmp();
        let p = dir.path().join("p.tsv");
        std::fs::write(
            &p,
            "snp_id\tchrom\tA\tB\nrs1\t1\t0.1\t0.2\nrs2\t1\t.\t0.4\n",
        )
        .unwrap();
        match read_panel(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("missing"));
            }
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "snp_id\tchrom\tA\tB\n").unwrap();
        assert!(matches!(read_panel(&p), Err(Error::EmptyPanel)));
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_panel(&p), Err(Error::EmptyPanel)));
    }

    #[test]
    fn sizes_must_match_panel() {
        let dir = tmp();
        let p = dir.path().join("p.tsv");
        std::fs::write(&p, "snp_id\tchrom\tA\tB\nrs1\t1\t0.1\t0.2\n").unwrap();
        let panel = read_panel(&p).unwrap();
        let s = dir.path().join("s.tsv");
        std::fs::write(&s, "snp_id\tchrom\tA\tB\nrs1\t1\t10\t12\n").unwrap();
        assert_eq!(read_sizes(&s, &panel).unwrap().row(0), &[10, 12]);
        std::fs::write(&s, "snp_id\tchrom\tA\tB\nrs1\t1\t.\t12\n").unwrap();
        assert!(read_sizes(&s, &panel).is_err());
        std::fs::write(&s, "snp_id\tchrom\tA\tB\nrs9\t1\t10\t12\n").unwrap();
        assert!(read_sizes(&s, &panel).is_err());
        std::fs::write(&s, "snp_id\tchrom\tA\tB\nrs1\t1\t1\t12\n").unwrap();
        assert!(read_sizes(&s, &panel).is_err());
    }

    #[test]
    fn scenario_parsing() {
        let cfg = parse_scenario(
            "# test\nm=7\nT=0.1375\nB=0.0025\nfactor=0.025\nn=1000\nseed=3\nt_block=4\nx0=uniform:0.1:0.9\nclamp=true\n",
            "s",
        )
        .unwrap();
        assert_eq!(cfg.params.m, 7);
        assert_eq!(cfg.sim.block_size, 4);
        assert!(cfg.sim.clamp);
        assert_eq!(cfg.params.x0_law, RootFreqLaw::Uniform { lo: 0.1, hi: 0.9 });
        match parse_scenario("m=5\nbogus=1\n", "s") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_scenario("B=1\n", "s").is_err());
    }

    #[test]
    fn pgm_scaling() {
        let dir = tmp();
        let p = dir.path().join("h.pgm");
        let a = SymMat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.5]]).unwrap();
        write_heatmap_pgm(&p, &a, 2).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 16);
        assert_eq!(&px[..4], &[255, 255, 0, 0]);
        assert_eq!(&px[12..], &[0, 0, 128, 128]);
    }
}
