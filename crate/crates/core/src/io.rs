//! Run-artifact serialization.
//!
//! A completed run is a plain directory:
//!
//! * `scenario.toml` — the resolved configuration the run executed
//! * `events_xx.bin`, `events_x.bin` — full click streams (binary layout
//!   below)
//! * `events_xx_sample.csv`, `events_x_sample.csv` — the first
//!   [`EVENTS_CSV_CAP`] records per arm as text, for eyeballing
//! * `histograms.json` — all per-setting coincidence histograms plus the
//!   aligned analysis frame
//! * `rho_zero.{json,csv}`, `rho_full.{json,csv}` — reconstructions of the
//!   zero-delay and full-period integration windows (the CSVs hold the
//!   Re/Im matrix tables as plot data)
//! * `curve.csv` — time-resolved `F_φ+`, `F_φ−`, concurrence dataset
//! * `fit_report.json` — oscillation-fit parameters and uncertainties
//! * `summary.txt`, `summary.json` — run summary, human / machine
//! * `manifest.json` — config digest, per-artifact digests, versions,
//!   wall time
//!
//! Everything except `manifest.json` is a pure function of the scenario and
//! the pulse count, so identical seeds give byte-identical artifacts. The
//! manifest additionally records wall time and must be compared with that
//! field ignored.
//!
//! ## Binary event layout
//!
//! Little endian throughout. Header: 8 magic bytes `b"ENTEVT01"`, then the
//! record count as `u64`. Each record is 18 bytes:
//!
//! ```text
//! u8  arm        0 = XX, 1 = X
//! u64 timestamp  femtoseconds (negative jitter tails saturate at 0)
//! u64 pulse      emitting pulse index (0 for dark / channel-noise clicks)
//! u8  origin     0 = signal, 1 = dark, 2 = channel noise
//! ```
//!
//! Femtosecond quantization is three decades below the detector response,
//! but it does mean a stream written to disk and read back is not
//! bit-identical to the in-memory stream; staged runs (`simulate` then
//! `tomograph`) are deterministic against themselves, not against a
//! single-process `run`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::{Arm, DetectionRecord, Origin};
use crate::error::Error;
use crate::Result;
use crate::measures::EntanglementCurve;
use crate::pipeline::{AnalysisRun, RunOutput, SimulatedStreams, TomographyRun};
use crate::qmath::{
    bell_state, concurrence, fidelity_to_state, purity, BellState, DensityMatrix, Unitary,
};
use crate::scenario::{Scenario, SettingsSet};
use crate::tomography::{CoincidenceHistogram, TomographyResult};

/// Magic prefix of the binary event format.
pub const EVENTS_MAGIC: &[u8; 8] = b"ENTEVT01";
/// Bytes per binary event record (after the 16-byte header).
pub const EVENT_RECORD_BYTES: usize = 18;
/// Header line of the text event format.
pub const EVENTS_CSV_HEADER: &str = "arm,timestamp_ps,pulse_index,origin";
/// Maximum records written to the text sample files; the binary files
/// always carry the full streams.
pub const EVENTS_CSV_CAP: usize = 100_000;

// ---------------------------------------------------------------------------
// Event streams: text
// ---------------------------------------------------------------------------

fn arm_label(arm: Arm) -> &'static str {
    match arm {
        Arm::Xx => "XX",
        Arm::X => "X",
    }
}

fn parse_arm(s: &str) -> Result<Arm> {
    match s {
        "XX" => Ok(Arm::Xx),
        "X" => Ok(Arm::X),
        other => Err(Error::invalid(format!("unknown arm label '{other}'"))),
    }
}

fn origin_label(origin: Origin) -> &'static str {
    match origin {
        Origin::Signal => "signal",
        Origin::Dark => "dark",
        Origin::ChannelNoise => "channel_noise",
    }
}

fn parse_origin(s: &str) -> Result<Origin> {
    match s {
        "signal" => Ok(Origin::Signal),
        "dark" => Ok(Origin::Dark),
        "channel_noise" => Ok(Origin::ChannelNoise),
        other => Err(Error::invalid(format!("unknown origin label '{other}'"))),
    }
}

/// Write records as text, one per line, timestamps in ps with 1 fs
/// resolution.
pub fn write_events_csv<W: Write>(mut w: W, records: &[DetectionRecord]) -> Result<()> {
    writeln!(w, "{EVENTS_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{:.3},{},{}",
            arm_label(r.arm),
            r.timestamp_ps,
            r.pulse_index,
            origin_label(r.origin)
        )?;
    }
    Ok(())
}

/// Parse the text event format (header line required).
pub fn read_events_csv<R: Read>(r: R) -> Result<Vec<DetectionRecord>> {
    let mut lines = BufReader::new(r).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == EVENTS_CSV_HEADER => {}
        Some(Ok(h)) => {
            return Err(Error::invalid(format!(
                "bad event header '{h}', expected '{EVENTS_CSV_HEADER}'"
            )))
        }
        Some(Err(e)) => return Err(e.into()),
        None => return Err(Error::invalid("empty event file")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::invalid(format!(
                "event line {}: expected 4 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| {
            Error::invalid(format!("event line {}: unparseable {what} '{}'", i + 2, line))
        };
        out.push(DetectionRecord {
            arm: parse_arm(fields[0])?,
            timestamp_ps: fields[1].parse().map_err(|_| bad("timestamp"))?,
            pulse_index: fields[2].parse().map_err(|_| bad("pulse index"))?,
            origin: parse_origin(fields[3])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Event streams: binary
// ---------------------------------------------------------------------------

fn arm_code(arm: Arm) -> u8 {
    match arm {
        Arm::Xx => 0,
        Arm::X => 1,
    }
}

fn origin_code(origin: Origin) -> u8 {
    match origin {
        Origin::Signal => 0,
        Origin::Dark => 1,
        Origin::ChannelNoise => 2,
    }
}

/// Write the compact binary event format documented at module level.
pub fn write_events_binary<W: Write>(mut w: W, records: &[DetectionRecord]) -> Result<()> {
    w.write_all(EVENTS_MAGIC)?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    let mut buf = [0u8; EVENT_RECORD_BYTES];
    for r in records {
        let fs = (r.timestamp_ps * 1e3).round().max(0.0);
        if !(fs <= u64::MAX as f64) {
            return Err(Error::invalid(format!(
                "timestamp {} ps does not fit the femtosecond field",
                r.timestamp_ps
            )));
        }
        buf[0] = arm_code(r.arm);
        buf[1..9].copy_from_slice(&(fs as u64).to_le_bytes());
        buf[9..17].copy_from_slice(&r.pulse_index.to_le_bytes());
        buf[17] = origin_code(r.origin);
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Read the compact binary event format.
pub fn read_events_binary<R: Read>(mut r: R) -> Result<Vec<DetectionRecord>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::invalid("truncated event file: missing header"))?;
    if &header[..8] != EVENTS_MAGIC {
        return Err(Error::invalid("not a binary event file (bad magic)"));
    }
    let n = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let n: usize = n
        .try_into()
        .map_err(|_| Error::invalid("event count overflows usize"))?;
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; EVENT_RECORD_BYTES];
    for i in 0..n {
        r.read_exact(&mut buf)
            .map_err(|_| Error::invalid(format!("truncated event file at record {i} of {n}")))?;
        let arm = match buf[0] {
            0 => Arm::Xx,
            1 => Arm::X,
            c => return Err(Error::invalid(format!("record {i}: bad arm code {c}"))),
        };
        let fs = u64::from_le_bytes(buf[1..9].try_into().expect("8 bytes"));
        let pulse_index = u64::from_le_bytes(buf[9..17].try_into().expect("8 bytes"));
        let origin = match buf[17] {
            0 => Origin::Signal,
            1 => Origin::Dark,
            2 => Origin::ChannelNoise,
            c => return Err(Error::invalid(format!("record {i}: bad origin code {c}"))),
        };
        out.push(DetectionRecord { arm, timestamp_ps: fs as f64 * 1e-3, pulse_index, origin });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// 2×2 complex matrix as row-major `[re, im]` pairs, for JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitaryJson(pub [[f64; 2]; 4]);

impl UnitaryJson {
    pub fn from_matrix(u: &Unitary) -> Self {
        let e = |r: usize, c: usize| [u[(r, c)].re, u[(r, c)].im];
        UnitaryJson([e(0, 0), e(0, 1), e(1, 0), e(1, 1)])
    }

    pub fn to_matrix(self) -> Unitary {
        let c = |k: usize| num_complex::Complex64::new(self.0[k][0], self.0[k][1]);
        Unitary::new(c(0), c(1), c(2), c(3))
    }
}

/// The per-setting coincidence histograms of one run, with enough metadata
/// to re-run the analysis stage from the file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramsFile {
    pub scenario_name: String,
    pub master_seed: u64,
    /// SHA-256 over the JSON of the channel stage chain.
    pub stage_chain_digest: String,
    pub settings_set: SettingsSet,
    pub bin_width_ps: f64,
    pub span_ps: f64,
    /// Aligned analysis frame `(u_xx, u_x)` when the alignment search ran.
    pub frame: Option<(UnitaryJson, UnitaryJson)>,
    pub histograms: Vec<CoincidenceHistogram>,
}

impl HistogramsFile {
    pub fn new(scenario: &Scenario, tomography: &TomographyRun) -> Result<Self> {
        Ok(HistogramsFile {
            scenario_name: scenario.name.clone(),
            master_seed: scenario.master_seed,
            stage_chain_digest: stage_chain_digest(scenario)?,
            settings_set: scenario.tomography.settings,
            bin_width_ps: scenario.tomography.bin_width_ps,
            span_ps: tomography.histograms.first().map_or(0.0, |h| h.span_ps),
            frame: tomography
                .frame
                .as_ref()
                .map(|(a, b)| (UnitaryJson::from_matrix(a), UnitaryJson::from_matrix(b))),
            histograms: tomography.histograms.clone(),
        })
    }

    /// The analysis frame as matrices.
    pub fn frame_matrices(&self) -> Option<(Unitary, Unitary)> {
        self.frame.map(|(a, b)| (a.to_matrix(), b.to_matrix()))
    }
}

// ---------------------------------------------------------------------------
// Density-matrix files
// ---------------------------------------------------------------------------

/// Basis labels of the two-photon computational basis, XX photon first.
pub const BASIS_LABELS: [&str; 4] = ["HH", "HV", "VH", "VV"];

/// One reconstructed window: the matrix as Re/Im tables plus the derived
/// figures of merit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoFile {
    /// `"zero_delay"` or `"full_period"`.
    pub window_label: String,
    pub window_start_ps: f64,
    pub window_width_ps: f64,
    pub re: [[f64; 4]; 4],
    pub im: [[f64; 4]; 4],
    pub f_phi_plus: f64,
    pub f_phi_minus: f64,
    pub f_psi_plus: f64,
    pub f_psi_minus: f64,
    pub concurrence: f64,
    pub purity: f64,
    pub log_likelihood: f64,
    pub iterations: u32,
    pub converged: bool,
}

impl RhoFile {
    pub fn new(
        window_label: &str,
        window_start_ps: f64,
        window_width_ps: f64,
        result: &TomographyResult,
    ) -> Self {
        let rho = &result.rho;
        let mut re = [[0.0; 4]; 4];
        let mut im = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                re[r][c] = rho[(r, c)].re;
                im[r][c] = rho[(r, c)].im;
            }
        }
        let f = |s: BellState| fidelity_to_state(rho, &bell_state(s));
        RhoFile {
            window_label: window_label.to_string(),
            window_start_ps,
            window_width_ps,
            re,
            im,
            f_phi_plus: f(BellState::PhiPlus),
            f_phi_minus: f(BellState::PhiMinus),
            f_psi_plus: f(BellState::PsiPlus),
            f_psi_minus: f(BellState::PsiMinus),
            concurrence: concurrence(rho),
            purity: purity(rho),
            log_likelihood: result.log_likelihood,
            iterations: result.iterations,
            converged: result.converged,
        }
    }

    /// Rebuild the complex matrix from the tables.
    pub fn rho(&self) -> DensityMatrix {
        DensityMatrix::from_fn(|r, c| num_complex::Complex64::new(self.re[r][c], self.im[r][c]))
    }
}

/// Plot-data table of one reconstruction: labeled Re and Im blocks (the
/// matrix bar-chart values).
pub fn write_rho_csv<W: Write>(mut w: W, rho: &RhoFile) -> Result<()> {
    for (name, table) in [("Re", &rho.re), ("Im", &rho.im)] {
        writeln!(
            w,
            "# {name}(rho), {} window [{:.3}, {:.3}) ps",
            rho.window_label,
            rho.window_start_ps,
            rho.window_start_ps + rho.window_width_ps
        )?;
        writeln!(w, "basis,{}", BASIS_LABELS.join(","))?;
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| format!("{:.6}", table[r][c])).collect();
            writeln!(w, "{},{}", BASIS_LABELS[r], row.join(","))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Curve
// ---------------------------------------------------------------------------

/// Header line of `curve.csv`.
pub const CURVE_CSV_HEADER: &str = "bin_center_ps,f_phi_plus,f_phi_minus,concurrence,counts";

pub fn write_curve_csv<W: Write>(mut w: W, curve: &EntanglementCurve) -> Result<()> {
    writeln!(w, "{CURVE_CSV_HEADER}")?;
    for i in 0..curve.len() {
        writeln!(
            w,
            "{:.3},{:.6},{:.6},{:.6},{}",
            curve.bin_centers_ps[i],
            curve.f_phi_plus[i],
            curve.f_phi_minus[i],
            curve.concurrence[i],
            curve.counts_per_bin[i]
        )?;
    }
    Ok(())
}

pub fn read_curve_csv<R: Read>(r: R) -> Result<EntanglementCurve> {
    let mut lines = BufReader::new(r).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == CURVE_CSV_HEADER => {}
        Some(Ok(h)) => {
            return Err(Error::invalid(format!(
                "bad curve header '{h}', expected '{CURVE_CSV_HEADER}'"
            )))
        }
        Some(Err(e)) => return Err(e.into()),
        None => return Err(Error::invalid("empty curve file")),
    }
    let mut curve = EntanglementCurve {
        bin_centers_ps: Vec::new(),
        f_phi_plus: Vec::new(),
        f_phi_minus: Vec::new(),
        concurrence: Vec::new(),
        counts_per_bin: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::invalid(format!(
                "curve line {}: expected 5 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k].parse().map_err(|_| {
                Error::invalid(format!("curve line {}: unparseable field '{}'", i + 2, fields[k]))
            })
        };
        curve.bin_centers_ps.push(num(0)?);
        curve.f_phi_plus.push(num(1)?);
        curve.f_phi_minus.push(num(2)?);
        curve.concurrence.push(num(3)?);
        curve.counts_per_bin.push(fields[4].parse().map_err(|_| {
            Error::invalid(format!("curve line {}: unparseable count '{}'", i + 2, fields[4]))
        })?);
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Digests and manifest
// ---------------------------------------------------------------------------

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        write!(s, "{b:02x}").expect("writing to String cannot fail");
    }
    s
}

/// Digest of the canonical (TOML) form of the full configuration.
pub fn config_digest(scenario: &Scenario) -> Result<String> {
    Ok(sha256_hex(scenario.to_toml()?.as_bytes()))
}

/// Digest of the channel stage chain alone (JSON form; TOML cannot root an
/// array).
pub fn stage_chain_digest(scenario: &Scenario) -> Result<String> {
    let json = serde_json::to_string(&scenario.stages)
        .map_err(|e| Error::invalid(format!("serializing stages: {e}")))?;
    Ok(sha256_hex(json.as_bytes()))
}

/// Run provenance: what was executed, from what configuration, producing
/// which bytes. `wall_time_s` is the only field that differs between
/// identically-seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_name: String,
    pub crate_version: String,
    pub scenario_name: String,
    pub master_seed: u64,
    pub n_pulses: u64,
    /// SHA-256 of `scenario.toml`'s content.
    pub config_digest: String,
    /// Accumulated pipeline wall time, s.
    pub wall_time_s: f64,
    /// Artifact file name → SHA-256 of its bytes (manifest excluded).
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    fn new(scenario: &Scenario, n_pulses: u64) -> Result<Self> {
        Ok(Manifest {
            crate_name: env!("CARGO_PKG_NAME").to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_name: scenario.name.clone(),
            master_seed: scenario.master_seed,
            n_pulses,
            config_digest: config_digest(scenario)?,
            wall_time_s: 0.0,
            artifacts: BTreeMap::new(),
        })
    }
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

/// Artifact file names.
pub mod files {
    pub const SCENARIO: &str = "scenario.toml";
    pub const EVENTS_XX: &str = "events_xx.bin";
    pub const EVENTS_X: &str = "events_x.bin";
    pub const EVENTS_XX_SAMPLE: &str = "events_xx_sample.csv";
    pub const EVENTS_X_SAMPLE: &str = "events_x_sample.csv";
    pub const HISTOGRAMS: &str = "histograms.json";
    pub const RHO_ZERO_JSON: &str = "rho_zero.json";
    pub const RHO_ZERO_CSV: &str = "rho_zero.csv";
    pub const RHO_FULL_JSON: &str = "rho_full.json";
    pub const RHO_FULL_CSV: &str = "rho_full.csv";
    pub const CURVE: &str = "curve.csv";
    pub const FIT_REPORT: &str = "fit_report.json";
    pub const SUMMARY_TXT: &str = "summary.txt";
    pub const SUMMARY_JSON: &str = "summary.json";
    pub const MANIFEST: &str = "manifest.json";
}

/// Canonical JSON encoding of the artifacts: pretty, trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::invalid(format!("serializing JSON: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Read and deserialize one JSON artifact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("reading {}: {e}", path.display())))
    })?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// A run directory plus its manifest, hashing every artifact it writes.
///
/// A fresh directory is started with [`RunDir::create`] (the `simulate` and
/// `run` entry points); later pipeline stages reopen it with
/// [`RunDir::open`] and extend the same manifest. Nothing reaches
/// `manifest.json` until [`RunDir::finish`].
#[derive(Debug)]
pub struct RunDir {
    dir: std::path::PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    /// Create (or truncate the manifest of) a run directory.
    pub fn create(dir: &Path, scenario: &Scenario, n_pulses: u64) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(RunDir { dir: dir.to_path_buf(), manifest: Manifest::new(scenario, n_pulses)? })
    }

    /// Reopen an existing run directory for an incremental stage.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(files::MANIFEST);
        if !manifest_path.exists() {
            return Err(Error::invalid(format!(
                "{} is not a run directory (no {}); run `simulate` or `run` first",
                dir.display(),
                files::MANIFEST
            )));
        }
        Ok(RunDir { dir: dir.to_path_buf(), manifest: read_json(&manifest_path)? })
    }

    pub fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.join(name)
    }

    /// Write one artifact and record its digest.
    pub fn save(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Add this stage's wall time and write the manifest.
    pub fn finish(&mut self, stage_wall_time_s: f64) -> Result<()> {
        self.manifest.wall_time_s += stage_wall_time_s;
        std::fs::write(self.dir.join(files::MANIFEST), to_json_pretty(&self.manifest)?)?;
        Ok(())
    }
}

/// Write the resolved configuration and both event streams (full binary
/// plus capped text samples).
pub fn save_streams(rd: &mut RunDir, scenario: &Scenario, streams: &SimulatedStreams) -> Result<()> {
    rd.save(files::SCENARIO, scenario.to_toml()?.as_bytes())?;
    for (records, bin_name, sample_name) in [
        (&streams.records_xx, files::EVENTS_XX, files::EVENTS_XX_SAMPLE),
        (&streams.records_x, files::EVENTS_X, files::EVENTS_X_SAMPLE),
    ] {
        let mut bin = Vec::with_capacity(16 + records.len() * EVENT_RECORD_BYTES);
        write_events_binary(&mut bin, records)?;
        rd.save(bin_name, &bin)?;
        let sample = &records[..records.len().min(EVENTS_CSV_CAP)];
        let mut csv = Vec::new();
        write_events_csv(&mut csv, sample)?;
        rd.save(sample_name, &csv)?;
    }
    Ok(())
}

/// Read both event streams back and rebuild the stream bundle (`n_pulses`
/// comes from the manifest, the wall-clock span from the scenario).
pub fn load_streams(rd: &RunDir, scenario: &Scenario) -> Result<SimulatedStreams> {
    let read = |name: &str| -> Result<Vec<DetectionRecord>> {
        let path = rd.path(name);
        let file = std::fs::File::open(&path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("reading {}: {e}", path.display())))
        })?;
        read_events_binary(std::io::BufReader::new(file))
    };
    let n_pulses = rd.manifest.n_pulses;
    Ok(SimulatedStreams {
        records_xx: read(files::EVENTS_XX)?,
        records_x: read(files::EVENTS_X)?,
        duration_s: n_pulses as f64 * scenario.source.t_rep_ps() * 1e-12,
        n_pulses,
    })
}

/// Write the histogram bundle and the reconstructions of both windows.
pub fn save_tomography(rd: &mut RunDir, scenario: &Scenario, tomo: &TomographyRun) -> Result<()> {
    rd.save(files::HISTOGRAMS, &to_json_pretty(&HistogramsFile::new(scenario, tomo)?)?)?;
    let span = scenario.source.t_rep_ps();
    let windows = [
        ("zero_delay", files::RHO_ZERO_JSON, files::RHO_ZERO_CSV, tomo.zero_window_ps, &tomo.rho_zero),
        ("full_period", files::RHO_FULL_JSON, files::RHO_FULL_CSV, span, &tomo.rho_full),
    ];
    for (label, json_name, csv_name, width, result) in windows {
        let rho_file = RhoFile::new(label, 0.0, width, result);
        rd.save(json_name, &to_json_pretty(&rho_file)?)?;
        let mut csv = Vec::new();
        write_rho_csv(&mut csv, &rho_file)?;
        rd.save(csv_name, &csv)?;
    }
    Ok(())
}

/// Write the curve dataset and, when the fit ran, the fit report.
pub fn save_analysis(rd: &mut RunDir, analysis: &AnalysisRun) -> Result<()> {
    let mut curve = Vec::new();
    write_curve_csv(&mut curve, &analysis.curve)?;
    rd.save(files::CURVE, &curve)?;
    if let Some(fit) = &analysis.fit {
        rd.save(files::FIT_REPORT, &to_json_pretty(fit)?)?;
    }
    Ok(())
}

/// Write every artifact of a completed run and return the manifest
/// (also written, as `manifest.json`).
pub fn write_run_artifacts(dir: &Path, out: &RunOutput, wall_time_s: f64) -> Result<Manifest> {
    let mut rd = RunDir::create(dir, &out.scenario, out.n_pulses)?;
    save_streams(&mut rd, &out.scenario, &out.streams)?;
    save_tomography(&mut rd, &out.scenario, &out.tomography)?;
    save_analysis(&mut rd, &out.analysis)?;
    let summary = out.summary();
    rd.save(files::SUMMARY_TXT, summary.to_string().as_bytes())?;
    rd.save(files::SUMMARY_JSON, &to_json_pretty(&summary)?)?;
    rd.finish(wall_time_s)?;
    Ok(rd.manifest)
}

/// Read a run directory's manifest.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(files::MANIFEST))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline;
    use crate::scenario::preset;

    fn sample_records() -> Vec<DetectionRecord> {
        vec![
            DetectionRecord {
                arm: Arm::Xx,
                timestamp_ps: 123.456,
                pulse_index: 0,
                origin: Origin::Signal,
            },
            DetectionRecord {
                arm: Arm::X,
                timestamp_ps: 250.0,
                pulse_index: 0,
                origin: Origin::Signal,
            },
            DetectionRecord {
                arm: Arm::Xx,
                timestamp_ps: 3401.75,
                pulse_index: 1,
                origin: Origin::Dark,
            },
            DetectionRecord {
                arm: Arm::X,
                timestamp_ps: 7000.125,
                pulse_index: 2,
                origin: Origin::ChannelNoise,
            },
        ]
    }

    #[test]
    fn csv_events_round_trip_at_femtosecond_resolution() {
        let records = sample_records();
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &records).unwrap();
        let back = read_events_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.arm, b.arm);
            assert_eq!(a.pulse_index, b.pulse_index);
            assert_eq!(a.origin, b.origin);
            assert!((a.timestamp_ps - b.timestamp_ps).abs() < 5e-4);
        }
    }

    #[test]
    fn csv_events_golden_text() {
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &sample_records()[..2]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "arm,timestamp_ps,pulse_index,origin\n\
             XX,123.456,0,signal\n\
             X,250.000,0,signal\n"
        );
    }

    #[test]
    fn csv_events_reject_malformed_input() {
        assert!(read_events_csv(&b"wrong,header\n"[..]).is_err());
        let bad_arm = format!("{EVENTS_CSV_HEADER}\nZZ,1.0,0,signal\n");
        assert!(read_events_csv(bad_arm.as_bytes()).is_err());
        let short = format!("{EVENTS_CSV_HEADER}\nXX,1.0,0\n");
        assert!(read_events_csv(short.as_bytes()).is_err());
    }

    #[test]
    fn binary_events_round_trip_exactly_on_grid() {
        // Timestamps on the fs grid survive a write/read cycle bit-exactly.
        let records = sample_records();
        let mut buf = Vec::new();
        write_events_binary(&mut buf, &records).unwrap();
        assert_eq!(buf.len(), 16 + records.len() * EVENT_RECORD_BYTES);
        let back = read_events_binary(&buf[..]).unwrap();
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.arm, b.arm);
            assert_eq!(a.pulse_index, b.pulse_index);
            assert_eq!(a.origin, b.origin);
            assert!((a.timestamp_ps - b.timestamp_ps).abs() < 5e-4);
        }
    }

    #[test]
    fn binary_events_golden_bytes() {
        let record = DetectionRecord {
            arm: Arm::X,
            timestamp_ps: 2.0, // 2000 fs = 0x7d0
            pulse_index: 3,
            origin: Origin::ChannelNoise,
        };
        let mut buf = Vec::new();
        write_events_binary(&mut buf, &[record]).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"ENTEVT01");
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.push(1); // arm X
        expect.extend_from_slice(&2000u64.to_le_bytes());
        expect.extend_from_slice(&3u64.to_le_bytes());
        expect.push(2); // channel noise
        assert_eq!(buf, expect);
    }

    #[test]
    fn binary_events_negative_jitter_saturates_at_zero() {
        let record = DetectionRecord {
            arm: Arm::Xx,
            timestamp_ps: -12.5,
            pulse_index: 0,
            origin: Origin::Signal,
        };
        let mut buf = Vec::new();
        write_events_binary(&mut buf, &[record]).unwrap();
        let back = read_events_binary(&buf[..]).unwrap();
        assert_eq!(back[0].timestamp_ps, 0.0);
    }

    #[test]
    fn binary_events_reject_corruption() {
        let mut buf = Vec::new();
        write_events_binary(&mut buf, &sample_records()).unwrap();
        assert!(read_events_binary(&buf[..10]).is_err()); // truncated header
        assert!(read_events_binary(&buf[..20]).is_err()); // truncated record
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_events_binary(&bad_magic[..]).is_err());
        let mut bad_arm = buf.clone();
        bad_arm[16] = 9;
        assert!(read_events_binary(&bad_arm[..]).is_err());
    }

    #[test]
    fn curve_csv_round_trips() {
        let curve = EntanglementCurve {
            bin_centers_ps: vec![4.0, 12.0, 20.0],
            f_phi_plus: vec![0.973512, 0.95, 0.9],
            f_phi_minus: vec![0.026488, 0.05, 0.1],
            concurrence: vec![0.947023, 0.9, 0.8],
            counts_per_bin: vec![1234, 1100, 950],
        };
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &curve).unwrap();
        let back = read_curve_csv(&buf[..]).unwrap();
        assert_eq!(back, curve);
    }

    #[test]
    fn unitary_json_round_trips() {
        let u = crate::tomography::euler_unitary(0.3, 1.1, -0.4);
        let back = UnitaryJson::from_matrix(&u).to_matrix();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(u[(r, c)], back[(r, c)]);
            }
        }
    }

    #[test]
    fn sha256_matches_known_vector() {
        // FIPS 180-2 test vector for "abc".
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn run_artifacts_cover_the_contract_and_digests_match() {
        let tmp = tempfile::tempdir().unwrap();
        let mut sc = preset("initial").unwrap();
        sc.analysis.fit = false; // not under test here; keep the run fast
        let out = pipeline::run(&sc, 40_000).unwrap();
        let manifest = write_run_artifacts(tmp.path(), &out, 1.25).unwrap();

        for name in [
            files::SCENARIO,
            files::EVENTS_XX,
            files::EVENTS_X,
            files::EVENTS_XX_SAMPLE,
            files::EVENTS_X_SAMPLE,
            files::HISTOGRAMS,
            files::RHO_ZERO_JSON,
            files::RHO_ZERO_CSV,
            files::RHO_FULL_JSON,
            files::RHO_FULL_CSV,
            files::CURVE,
            files::SUMMARY_TXT,
            files::SUMMARY_JSON,
        ] {
            let path = tmp.path().join(name);
            assert!(path.exists(), "missing artifact {name}");
            let bytes = std::fs::read(&path).unwrap();
            assert_eq!(
                manifest.artifacts.get(name).unwrap(),
                &sha256_hex(&bytes),
                "digest mismatch for {name}"
            );
        }
        // Fit disabled → no fit report, and the manifest agrees.
        assert!(!tmp.path().join(files::FIT_REPORT).exists());
        assert!(!manifest.artifacts.contains_key(files::FIT_REPORT));

        let loaded = read_manifest(tmp.path()).unwrap();
        assert_eq!(loaded, manifest);
        assert_eq!(loaded.config_digest, config_digest(&sc).unwrap());

        // Binary streams round-trip to the full record count.
        let xx = read_events_binary(
            std::fs::File::open(tmp.path().join(files::EVENTS_XX)).unwrap(),
        )
        .unwrap();
        assert_eq!(xx.len(), out.streams.records_xx.len());

        // Histogram file reproduces the in-memory histograms.
        let hf: HistogramsFile = read_json(&tmp.path().join(files::HISTOGRAMS)).unwrap();
        assert_eq!(hf.histograms, out.tomography.histograms);
        assert_eq!(hf.stage_chain_digest, stage_chain_digest(&sc).unwrap());

        // Rho JSON reproduces the reconstruction and its figures of merit.
        let rz: RhoFile = read_json(&tmp.path().join(files::RHO_ZERO_JSON)).unwrap();
        let rho = rz.rho();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(rho[(r, c)], out.tomography.rho_zero.rho[(r, c)]);
            }
        }
        let curve = read_curve_csv(
            std::fs::File::open(tmp.path().join(files::CURVE)).unwrap(),
        )
        .unwrap();
        assert_eq!(curve.len(), out.analysis.curve.len());
    }

    #[test]
    fn staged_directory_reopens_and_streams_reload() {
        let tmp = tempfile::tempdir().unwrap();
        let mut sc = preset("initial").unwrap();
        sc.analysis.fit = false;
        let streams = pipeline::simulate(&sc, 20_000).unwrap();
        let mut rd = RunDir::create(tmp.path(), &sc, 20_000).unwrap();
        save_streams(&mut rd, &sc, &streams).unwrap();
        rd.finish(0.5).unwrap();

        let mut rd = RunDir::open(tmp.path()).unwrap();
        assert_eq!(rd.manifest.n_pulses, 20_000);
        let back = load_streams(&rd, &sc).unwrap();
        assert_eq!(back.records_xx.len(), streams.records_xx.len());
        assert_eq!(back.records_x.len(), streams.records_x.len());
        assert!((back.duration_s - streams.duration_s).abs() < 1e-12);
        let max_dev = streams
            .records_x
            .iter()
            .zip(&back.records_x)
            .map(|(a, b)| (a.timestamp_ps - b.timestamp_ps).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 5e-4, "femtosecond quantization exceeded: {max_dev}");

        // A later stage accumulates wall time in the same manifest.
        rd.finish(0.25).unwrap();
        let manifest = read_manifest(tmp.path()).unwrap();
        assert!((manifest.wall_time_s - 0.75).abs() < 1e-12);
    }

    #[test]
    fn open_refuses_a_directory_without_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let err = RunDir::open(tmp.path()).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn rho_csv_is_two_labeled_tables() {
        let result = TomographyResult {
            rho: crate::qmath::outer_product(&bell_state(BellState::PhiPlus)),
            log_likelihood: -1.0,
            iterations: 1,
            converged: true,
        };
        let rho_file = RhoFile::new("zero_delay", 0.0, 8.0, &result);
        let mut buf = Vec::new();
        write_rho_csv(&mut buf, &rho_file).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# Re(rho), zero_delay window [0.000, 8.000) ps"));
        assert!(text.contains("# Im(rho)"));
        assert!(text.contains("basis,HH,HV,VH,VV"));
        assert!(text.contains("HH,0.500000,0.000000,0.000000,0.500000"));
        assert!((rho_file.f_phi_plus - 1.0).abs() < 1e-12);
        assert!((rho_file.f_phi_plus + rho_file.f_phi_minus + rho_file.f_psi_plus
            + rho_file.f_psi_minus
            - 1.0)
            .abs()
            < 1e-12);
    }
}
