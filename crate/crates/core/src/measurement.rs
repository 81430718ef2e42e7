//! Weak σz POVM measurement channel and ±1 record simulation.
//!
//! Measurement operators are `A± = (√(1±κ)|0⟩⟨0| + √(1∓κ)|1⟩⟨1|)/√2`. A record
//! alternates free evolution over `Δt` with one weak measurement. Averaged
//! over outcomes the measurement multiplies coherences by `√(1−κ²)`, which to
//! first order in κ² is a Pauli z-channel of rate `Γ_meas = κ²/(4Δt)`.

use std::io::{BufRead, Read, Write};

use rand::RngExt;

use crate::error::{domain, ensure_finite, QdmError, Result};
use crate::qubit::{
    apply_propagator, build_liouvillian, kron, steady_state, DecoherenceChannel, DensityMatrix, Mat2, Mat4,
    ProbeHamiltonian, C64,
};
use rayon::prelude::*;

use crate::rng::{derive_seed, rng_from_seed, QdmRng};

/// POVM strength κ and repetition interval Δt (bandwidth 1/Δt).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakMeasurementChannel {
    kappa: f64,
    delta_t: f64,
}

impl WeakMeasurementChannel {
    pub fn new(kappa: f64, delta_t: f64) -> Result<Self> {
        check_kappa(kappa)?;
        ensure_finite("delta_t", delta_t)?;
        if delta_t <= 0.0 {
            return domain(format!("delta_t must be > 0, got {delta_t}"));
        }
        Ok(Self { kappa, delta_t })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn bandwidth(&self) -> f64 {
        1.0 / self.delta_t
    }
}

/// Probe Hamiltonian, intrinsic dephasing and readout channel of one probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub hamiltonian: ProbeHamiltonian,
    /// Intrinsic Pauli z-rate Γ_q.
    pub intrinsic_rate: f64,
    pub channel: WeakMeasurementChannel,
}

impl ProbeConfig {
    pub fn new(hamiltonian: ProbeHamiltonian, intrinsic_rate: f64, channel: WeakMeasurementChannel) -> Result<Self> {
        ensure_finite("intrinsic_rate", intrinsic_rate)?;
        if intrinsic_rate < 0.0 {
            return domain(format!("intrinsic rate must be >= 0, got {intrinsic_rate}"));
        }
        Ok(Self {
            hamiltonian,
            intrinsic_rate,
            channel,
        })
    }

    /// NV-centre probe in SI units: 10 MHz Rabi frequency (ε = 2π·5 MHz),
    /// Γ_q = 2π·0.1 MHz, 100 MHz bandwidth (Δt = 10 ns), κ = 0.1.
    pub fn nv_center() -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        Self {
            hamiltonian: ProbeHamiltonian {
                epsilon: two_pi * 5e6,
                delta: 0.0,
            },
            intrinsic_rate: two_pi * 0.1e6,
            channel: WeakMeasurementChannel {
                kappa: 0.1,
                delta_t: 10e-9,
            },
        }
    }

    /// Dimensionless probe with unit transition energy (ε = ½), Γ_q = 0.01,
    /// κ = 0.1 and Δt = 0.1.
    pub fn normalized() -> Self {
        Self {
            hamiltonian: ProbeHamiltonian {
                epsilon: 0.5,
                delta: 0.0,
            },
            intrinsic_rate: 0.01,
            channel: WeakMeasurementChannel {
                kappa: 0.1,
                delta_t: 0.1,
            },
        }
    }

    pub fn transition_energy(&self) -> f64 {
        self.hamiltonian.transition_energy()
    }

    /// Intrinsic plus `extra` z-dephasing, without the measurement channel.
    pub fn channels(&self, extra: f64) -> Result<Vec<DecoherenceChannel>> {
        Ok(vec![DecoherenceChannel::dephasing(self.intrinsic_rate + extra)?])
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) {
        return domain(format!("kappa must lie in [0, 1], got {kappa}"));
    }
    Ok(())
}

/// The measurement operators `(A₊, A₋)`.
pub fn measurement_operators(kappa: f64) -> Result<(Mat2, Mat2)> {
    check_kappa(kappa)?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let a = |sign: f64| {
        Mat2::new(
            C64::new(s * (1.0 + sign * kappa).sqrt(), 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(s * (1.0 - sign * kappa).sqrt(), 0.0),
        )
    };
    Ok((a(1.0), a(-1.0)))
}

/// Superoperator of the outcome-averaged channel `A₊ρA₊† + A₋ρA₋†`.
pub fn nonselective_superoperator(kappa: f64) -> Result<Mat4> {
    let (ap, am) = measurement_operators(kappa)?;
    // A± are real diagonal, so vec(AρA†) = (A ⊗ A) vec(ρ).
    Ok(kron(&ap, &ap) + kron(&am, &am))
}

/// One weak measurement: outcome `+1` when `u < (1 + κ⟨σz⟩)/2`.
pub fn weak_povm_update(rho: &DensityMatrix, kappa: f64, u: f64) -> Result<(i8, DensityMatrix)> {
    check_kappa(kappa)?;
    Ok(povm_step(rho.matrix(), kappa, u))
}

#[inline]
fn povm_step(m: &Mat2, kappa: f64, u: f64) -> (i8, DensityMatrix) {
    let r00 = m[(0, 0)].re;
    let r11 = m[(1, 1)].re;
    let p_plus = 0.5 * (1.0 + kappa * (r00 - r11));
    let (sign, p) = if u < p_plus {
        (1.0, p_plus)
    } else {
        (-1.0, 1.0 - p_plus)
    };
    // A ρ A† / p with A diagonal: populations scale by (1 ± κ)/2, coherences by √(1−κ²)/2.
    let w0 = 0.5 * (1.0 + sign * kappa);
    let w1 = 0.5 * (1.0 - sign * kappa);
    let off = 0.5 * ((1.0 - kappa * kappa).max(0.0)).sqrt();
    let post = Mat2::new(
        C64::new(w0 * r00 / p, 0.0),
        m[(0, 1)] * (off / p),
        m[(1, 0)] * (off / p),
        C64::new(w1 * r11 / p, 0.0),
    );
    (sign as i8, DensityMatrix::from_propagated(post))
}

/// `Γ_meas = κ²/(4Δt)`.
pub fn measurement_induced_rate(chan: &WeakMeasurementChannel) -> f64 {
    chan.kappa * chan.kappa / (4.0 * chan.delta_t)
}

/// Pauli z-channel equivalent to the outcome-averaged measurement.
///
/// With `D[ρ] = Γ(σzρσz − ρ)` coherences decay as `e^{−2Γt}`; matching the
/// per-step factor `√(1−κ²) ≈ e^{−κ²/2}` gives `Γ = κ²/(4Δt) = Γ_meas`.
pub fn measurement_channel(chan: &WeakMeasurementChannel) -> DecoherenceChannel {
    DecoherenceChannel::dephasing(measurement_induced_rate(chan)).expect("rate is nonnegative")
}

/// Warn when measurement-induced dephasing is not the smallest decoherence
/// source. Returns the message that was logged, if any.
pub fn check_operating_regime(chan: &WeakMeasurementChannel, intrinsic: f64, sample: f64) -> Option<String> {
    let g = measurement_induced_rate(chan);
    let mut over = Vec::new();
    if intrinsic > 0.0 && g > intrinsic {
        over.push(format!("intrinsic rate {intrinsic:.3e}"));
    }
    if sample > 0.0 && g > sample {
        over.push(format!("sample-induced rate {sample:.3e}"));
    }
    if over.is_empty() {
        return None;
    }
    let msg = format!("measurement-induced dephasing {g:.3e} exceeds {}", over.join(" and "));
    log::warn!("{msg}");
    Some(msg)
}

/// Small-κ information gain per measurement of I/2, in bits: `κ²/ln 4`.
pub fn entropy_reduction(kappa: f64) -> f64 {
    kappa * kappa / 4f64.ln()
}

/// `S(ρ) − Σ± P(±) S(ρ′±)` in bits.
pub fn exact_entropy_reduction(rho: &DensityMatrix, kappa: f64) -> Result<f64> {
    let (ap, am) = measurement_operators(kappa)?;
    let mut after = 0.0;
    for a in [ap, am] {
        let unnorm = a * rho.matrix() * a.adjoint();
        let p = unnorm.trace().re;
        if p > 0.0 {
            after += p * DensityMatrix::from_propagated(unnorm / C64::new(p, 0.0)).entropy_bits();
        }
    }
    Ok(rho.entropy_bits() - after)
}

/// A ±1 measurement record.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    outcomes: Vec<i8>,
    delta_t: f64,
    kappa: f64,
    seed: u64,
}

impl MeasurementRecord {
    pub fn new(outcomes: Vec<i8>, delta_t: f64, kappa: f64, seed: u64) -> Result<Self> {
        if outcomes.is_empty() {
            return domain("record must contain at least one outcome");
        }
        if let Some(bad) = outcomes.iter().find(|&&o| o != 1 && o != -1) {
            return domain(format!("record entries must be ±1, found {bad}"));
        }
        WeakMeasurementChannel::new(kappa, delta_t)?;
        Ok(Self {
            outcomes,
            delta_t,
            kappa,
            seed,
        })
    }

    pub fn outcomes(&self) -> &[i8] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|&o| o as f64).sum::<f64>() / self.len() as f64
    }

    fn header(&self) -> String {
        format!(
            "kappa={:e} delta_t={:e} seed={} n={}",
            self.kappa,
            self.delta_t,
            self.seed,
            self.len()
        )
    }

    /// Binary form: `QDMREC1\n`, one header line, then one byte per outcome
    /// (`1` for +1, `0` for −1).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "QDMREC1")?;
        writeln!(w, "{}", self.header())?;
        let bytes: Vec<u8> = self.outcomes.iter().map(|&o| u8::from(o > 0)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim_end() != "QDMREC1" {
            return Err(QdmError::Parse {
                line: 1,
                message: "bad record magic".into(),
            });
        }
        let mut header = String::new();
        r.read_line(&mut header)?;
        let (kappa, delta_t, seed, n) = parse_header(header.trim(), 2)?;
        let mut bytes = Vec::with_capacity(n);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n {
            return Err(QdmError::Parse {
                line: 3,
                message: format!("expected {n} outcome bytes, found {}", bytes.len()),
            });
        }
        let outcomes = bytes
            .iter()
            .map(|&b| match b {
                1 => Ok(1),
                0 => Ok(-1),
                other => Err(QdmError::Parse {
                    line: 3,
                    message: format!("invalid outcome byte {other}"),
                }),
            })
            .collect::<Result<Vec<i8>>>()?;
        Self::new(outcomes, delta_t, kappa, seed)
    }

    /// CSV form: `# <header>`, then `index,time,outcome` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", self.header())?;
        writeln!(w, "index,time,outcome")?;
        for (i, o) in self.outcomes.iter().enumerate() {
            writeln!(w, "{i},{:e},{o}", (i + 1) as f64 * self.delta_t)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let r = std::io::BufReader::new(r);
        let mut header = None;
        let mut outcomes = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if let Some(h) = line.strip_prefix("# ") {
                header = Some(parse_header(h.trim(), lineno)?);
            } else if line.starts_with("index") || line.trim().is_empty() {
                continue;
            } else {
                let o = line
                    .rsplit(',')
                    .next()
                    .and_then(|s| s.trim().parse::<i8>().ok())
                    .ok_or_else(|| QdmError::Parse {
                        line: lineno,
                        message: format!("bad record row {line:?}"),
                    })?;
                outcomes.push(o);
            }
        }
        let (kappa, delta_t, seed, n) = header.ok_or(QdmError::Parse {
            line: 1,
            message: "missing record header".into(),
        })?;
        if outcomes.len() != n {
            return Err(QdmError::Parse {
                line: 0,
                message: format!("header declares {n} outcomes, found {}", outcomes.len()),
            });
        }
        Self::new(outcomes, delta_t, kappa, seed)
    }
}

fn parse_header(h: &str, line: usize) -> Result<(f64, f64, u64, usize)> {
    let err = |m: String| QdmError::Parse { line, message: m };
    let mut kappa = None;
    let mut delta_t = None;
    let mut seed = None;
    let mut n = None;
    for tok in h.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("bad header token {tok:?}")))?;
        let bad = |_| err(format!("bad value in {tok:?}"));
        match k {
            "kappa" => kappa = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "delta_t" => delta_t = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
            "n" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(err(format!("unknown header key {k:?}"))),
        }
    }
    match (kappa, delta_t, seed, n) {
        (Some(a), Some(b), Some(c), Some(d)) => Ok((a, b, c, d)),
        _ => Err(err("header must carry kappa, delta_t, seed, n".into())),
    }
}

/// Simulate `n_steps` weak measurements starting from the stationary state
/// of the measurement-augmented Liouvillian (I/2 when that is not unique).
pub fn simulate_record(
    probe: &ProbeHamiltonian,
    channels: &[DecoherenceChannel],
    chan: &WeakMeasurementChannel,
    n_steps: usize,
    seed: u64,
) -> Result<MeasurementRecord> {
    let mut augmented = channels.to_vec();
    augmented.push(measurement_channel(chan));
    let rho0 = match steady_state(&build_liouvillian(probe, &augmented)?) {
        Ok(ss) => ss,
        Err(QdmError::NonUniqueSteadyState { .. }) => DensityMatrix::maximally_mixed(),
        Err(e) => return Err(e),
    };
    simulate_record_from(&rho0, probe, channels, chan, n_steps, seed)
}

/// As [`simulate_record`] with an explicit initial state.
pub fn simulate_record_from(
    rho0: &DensityMatrix,
    probe: &ProbeHamiltonian,
    channels: &[DecoherenceChannel],
    chan: &WeakMeasurementChannel,
    n_steps: usize,
    seed: u64,
) -> Result<MeasurementRecord> {
    if n_steps == 0 {
        return domain("n_steps must be >= 1");
    }
    let step = AffineStep::new(&build_liouvillian(probe, channels)?.propagator(chan.delta_t)?)?;
    let mut rng = rng_from_seed(seed);
    let mut r = rho0.bloch();
    let off = (1.0 - chan.kappa * chan.kappa).max(0.0).sqrt();
    let outcomes = (0..n_steps)
        .map(|_| {
            let (o, post) = bloch_measure(step.apply(r), chan.kappa, off, rng.random::<f64>());
            r = post;
            o
        })
        .collect();
    MeasurementRecord::new(outcomes, chan.delta_t, chan.kappa, seed)
}

/// Conditional `⟨σz⟩` averaged over `n_records` independent trajectories
/// from `rho0`, sampled after measurements `stride, 2·stride, …, n_steps`.
/// Record `r` draws from `derive_seed(seed, [r])`.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_sigma_z(
    rho0: &DensityMatrix,
    probe: &ProbeHamiltonian,
    channels: &[DecoherenceChannel],
    chan: &WeakMeasurementChannel,
    n_steps: usize,
    n_records: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_steps == 0 || n_records == 0 || stride == 0 {
        return domain("n_steps, n_records and stride must be >= 1");
    }
    let step = AffineStep::new(&build_liouvillian(probe, channels)?.propagator(chan.delta_t)?)?;
    let off = (1.0 - chan.kappa * chan.kappa).max(0.0).sqrt();
    let r0 = rho0.bloch();
    let per_record: Vec<Vec<f64>> = (0..n_records)
        .into_par_iter()
        .map(|rec| {
            let mut rng = rng_from_seed(derive_seed(seed, &[rec as u64]));
            let mut r = r0;
            let mut out = Vec::with_capacity(n_steps / stride);
            for k in 1..=n_steps {
                r = bloch_measure(step.apply(r), chan.kappa, off, rng.random::<f64>()).1;
                if k % stride == 0 {
                    out.push(r[2]);
                }
            }
            out
        })
        .collect();
    // Summed in record order so the result does not depend on the pool size.
    let mut mean = vec![0.0; n_steps / stride];
    for rec in &per_record {
        for (m, v) in mean.iter_mut().zip(rec) {
            *m += v;
        }
    }
    Ok(mean.into_iter().map(|m| m / n_records as f64).collect())
}

/// A Liouvillian propagator acting on Bloch vectors, `r ↦ M r + b`.
#[derive(Debug, Clone, Copy)]
struct AffineStep {
    m: [[f64; 3]; 3],
    b: [f64; 3],
}

impl AffineStep {
    fn new(p: &Mat4) -> Result<Self> {
        let b = apply_propagator(p, &DensityMatrix::maximally_mixed()).bloch();
        let mut m = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = 1.0;
            let r = apply_propagator(p, &DensityMatrix::from_bloch(e[0], e[1], e[2])?).bloch();
            for i in 0..3 {
                m[i][j] = r[i] - b[i];
            }
        }
        Ok(Self { m, b })
    }

    #[inline]
    fn apply(&self, r: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        std::array::from_fn(|i| m[i][0] * r[0] + m[i][1] * r[1] + m[i][2] * r[2] + self.b[i])
    }
}

/// [`povm_step`] on a Bloch vector; `off = √(1−κ²)`.
#[inline]
fn bloch_measure(r: [f64; 3], kappa: f64, off: f64, u: f64) -> (i8, [f64; 3]) {
    let p_plus = 0.5 * (1.0 + kappa * r[2]);
    let sign = if u < p_plus { 1.0 } else { -1.0 };
    let d = 1.0 + sign * kappa * r[2];
    let post = [r[0] * off / d, r[1] * off / d, (r[2] + sign * kappa) / d];
    (sign as i8, post)
}

/// Steps until the next flip of a two-state source that flips with
/// probability `p` per step (at least 1; `usize::MAX` when `p = 0`).
fn steps_to_flip(rng: &mut QdmRng, p: f64) -> usize {
    if p <= 0.0 {
        return usize::MAX;
    }
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = rng.random();
    let k = ((1.0 - u).ln() / (-p).ln_1p()).floor();
    if k >= (usize::MAX / 2) as f64 {
        usize::MAX / 2
    } else {
        k as usize + 1
    }
}

/// Run one trajectory, calling `observe(step, ρ_after_measurement)` after
/// every measurement. Returns the outcomes and the final conditional state.
pub fn run_trajectory<F: FnMut(usize, &DensityMatrix)>(
    rho0: &DensityMatrix,
    probe: &ProbeHamiltonian,
    channels: &[DecoherenceChannel],
    chan: &WeakMeasurementChannel,
    n_steps: usize,
    seed: u64,
    mut observe: F,
) -> Result<(Vec<i8>, DensityMatrix)> {
    if n_steps == 0 {
        return domain("n_steps must be >= 1");
    }
    let step = build_liouvillian(probe, channels)?.propagator(chan.delta_t)?;
    let mut rng = rng_from_seed(seed);
    let mut rho = *rho0;
    let mut outcomes = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        rho = apply_propagator(&step, &rho);
        let (o, post) = povm_step(rho.matrix(), chan.kappa, rng.random::<f64>());
        rho = post;
        outcomes.push(o);
        observe(k, &rho);
    }
    Ok((outcomes, rho))
}

/// A slow two-state source (e.g. a mesoscopic spin) that shifts the probe
/// while in its ground (`+amplitude`) or excited (`−amplitude`) state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelegraphSource {
    /// Shift applied in the ground state; the excited state applies its negative.
    pub amplitude: f64,
    /// Stationary excited-state population.
    pub p_excited: f64,
    /// Total switching rate `k↑ + k↓` (inverse correlation time).
    pub switching_rate: f64,
}

/// How a source shift enters the probe Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Added to the σz coefficient Δ.
    Delta,
    /// Added to the transition energy `2√(ε²+Δ²)`.
    Transition,
}

impl Coupling {
    pub fn apply(self, h: &ProbeHamiltonian, shift: f64) -> ProbeHamiltonian {
        match self {
            Coupling::Delta => h.with_delta_shift(shift),
            Coupling::Transition => h.with_transition_shift(shift),
        }
    }
}

/// Simulate a record while independent telegraph sources switch the probe
/// Hamiltonian between configurations.
///
/// Sources start from their stationary distribution; after each step of
/// length Δt a ground (excited) source flips with probability
/// `1 − e^{−k↑Δt}` (`1 − e^{−k↓Δt}`), `k↑ = k·p_e`, `k↓ = k·(1 − p_e)`.
/// Flip times are drawn as geometric waiting times rather than per step.
/// At most 16 sources are supported.
#[allow(clippy::too_many_arguments)]
pub fn simulate_switching_record(
    base: &ProbeHamiltonian,
    coupling: Coupling,
    sources: &[TelegraphSource],
    channels: &[DecoherenceChannel],
    chan: &WeakMeasurementChannel,
    n_steps: usize,
    seed: u64,
) -> Result<MeasurementRecord> {
    if n_steps == 0 {
        return domain("n_steps must be >= 1");
    }
    if sources.len() > 16 {
        return domain(format!("at most 16 telegraph sources supported, got {}", sources.len()));
    }
    for s in sources {
        ensure_finite("amplitude", s.amplitude)?;
        if !(0.0..=1.0).contains(&s.p_excited) || !(s.switching_rate >= 0.0) {
            return domain("telegraph source needs p_excited in [0,1] and switching_rate >= 0");
        }
    }
    let dt = chan.delta_t;
    let flip_up: Vec<f64> = sources
        .iter()
        .map(|s| -(-s.switching_rate * s.p_excited * dt).exp_m1())
        .collect();
    let flip_down: Vec<f64> = sources
        .iter()
        .map(|s| -(-s.switching_rate * (1.0 - s.p_excited) * dt).exp_m1())
        .collect();

    let hamiltonian_for = |mask: u32| {
        let shift: f64 = sources
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if mask & (1 << i) != 0 {
                    -s.amplitude
                } else {
                    s.amplitude
                }
            })
            .sum();
        coupling.apply(base, shift)
    };

    let mut rng = rng_from_seed(seed);
    let mut mask = 0u32;
    for (i, s) in sources.iter().enumerate() {
        if rng.random::<f64>() < s.p_excited {
            mask |= 1 << i;
        }
    }

    let mut cache: std::collections::HashMap<u32, AffineStep> = std::collections::HashMap::new();
    let mut propagator = |mask: u32| -> Result<AffineStep> {
        if let Some(p) = cache.get(&mask) {
            return Ok(*p);
        }
        let p = AffineStep::new(&build_liouvillian(&hamiltonian_for(mask), channels)?.propagator(dt)?)?;
        cache.insert(mask, p);
        Ok(p)
    };

    let mut augmented = channels.to_vec();
    augmented.push(measurement_channel(chan));
    let mut r = match steady_state(&build_liouvillian(&hamiltonian_for(mask), &augmented)?) {
        Ok(ss) => ss.bloch(),
        Err(QdmError::NonUniqueSteadyState { .. }) => [0.0; 3],
        Err(e) => return Err(e),
    };

    let flip_prob = |mask: u32, i: usize| if mask & (1 << i) != 0 { flip_down[i] } else { flip_up[i] };
    // Step index at which each source next flips.
    let mut next_flip: Vec<usize> = (0..sources.len())
        .map(|i| steps_to_flip(&mut rng, flip_prob(mask, i)))
        .collect();
    let off = (1.0 - chan.kappa * chan.kappa).max(0.0).sqrt();
    let mut outcomes = Vec::with_capacity(n_steps);
    let mut step = propagator(mask)?;
    for k in 1..=n_steps {
        let (o, post) = bloch_measure(step.apply(r), chan.kappa, off, rng.random::<f64>());
        r = post;
        outcomes.push(o);
        let mut changed = false;
        for (i, next) in next_flip.iter_mut().enumerate() {
            if *next == k {
                mask ^= 1 << i;
                changed = true;
                *next = k.saturating_add(steps_to_flip(&mut rng, flip_prob(mask, i)));
            }
        }
        if changed {
            step = propagator(mask)?;
        }
    }
    MeasurementRecord::new(outcomes, dt, chan.kappa, seed)
}
