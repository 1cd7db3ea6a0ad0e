//! Channel statistics and seeded realization sampling.
//!
//! Indices here are 0-based: user index `k` refers to user `k + 1` of the
//! multicast model.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand_chacha::ChaCha12Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::math;

/// Default one-ring angular spread (10 degrees).
pub const DEFAULT_SPREAD: f64 = 10.0 * PI / 180.0;
/// Default antenna spacing in wavelengths.
pub const DEFAULT_SPACING: f64 = 0.5;
/// Group azimuths are spread over `[-AZIMUTH_SPAN, AZIMUTH_SPAN]`.
pub const AZIMUTH_SPAN: f64 = PI / 3.0;

/// Identifies one random stream below a master seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub realization: u32,
    pub user: u16,
    pub subcarrier: u16,
}

impl StreamId {
    pub const fn packed(self) -> u64 {
        ((self.realization as u64) << 32) | ((self.user as u64) << 16) | self.subcarrier as u64
    }
}

/// A seed plus a stream id; identical values always yield identical draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub id: StreamId,
}

impl RngStream {
    pub const fn new(seed: u64, id: StreamId) -> Self {
        RngStream { seed, id }
    }

    pub const fn for_realization(seed: u64, realization: u32) -> Self {
        RngStream {
            seed,
            id: StreamId {
                realization,
                user: 0,
                subcarrier: 0,
            },
        }
    }

    /// Same seed and realization, different `(user, subcarrier)`.
    pub const fn at(self, user: usize, subcarrier: usize) -> Self {
        RngStream {
            seed: self.seed,
            id: StreamId {
                realization: self.id.realization,
                user: user as u16,
                subcarrier: subcarrier as u16,
            },
        }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.id.packed());
        rng
    }
}

/// SplitMix64 finalizer.
pub const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a counter path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// One draw of `CN(0, 1)`.
pub fn complex_normal<R: rand_core::RngCore + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * core::f64::consts::FRAC_1_SQRT_2
}

/// Statistical model of the channel.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelModel {
    /// `Q = λ I`.
    Iid { lambda: f64 },
    /// Uniform linear array with scatterers on a ring around each user.
    OneRing {
        azimuths: Vec<f64>,
        spread: f64,
        spacing: f64,
    },
    /// Caller-supplied covariances.
    Custom,
}

/// Per-(user, subcarrier) covariance matrices and their square roots.
#[derive(Clone, Debug)]
pub struct ChannelStatistics {
    users: usize,
    subcarriers: usize,
    antennas: usize,
    model: ChannelModel,
    covariances: Vec<CMatrix>,
    roots: Vec<CMatrix>,
}

fn check_dims(users: usize, subcarriers: usize, antennas: usize) -> Result<()> {
    if users == 0 || subcarriers == 0 || antennas == 0 {
        return Err(Error::Dimension(format!(
            "channel dimensions must be positive (K={users}, N={subcarriers}, M={antennas})"
        )));
    }
    if users > u16::MAX as usize || subcarriers > u16::MAX as usize {
        return Err(Error::Dimension("too many users or subcarriers".into()));
    }
    Ok(())
}

impl ChannelStatistics {
    pub fn iid(users: usize, subcarriers: usize, antennas: usize, lambda: f64) -> Result<Self> {
        check_dims(users, subcarriers, antennas)?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        let q = CMatrix::from_diagonal_element(antennas, antennas, Complex64::new(lambda, 0.0));
        let r = CMatrix::from_diagonal_element(antennas, antennas, Complex64::new(math::sqrt(lambda), 0.0));
        let count = users * subcarriers;
        Ok(ChannelStatistics {
            users,
            subcarriers,
            antennas,
            model: ChannelModel::Iid { lambda },
            covariances: alloc::vec![q; count],
            roots: alloc::vec![r; count],
        })
    }

    /// Subcarrier-flat one-ring covariances, one azimuth per user.
    pub fn one_ring(
        subcarriers: usize,
        antennas: usize,
        azimuths: &[f64],
        spread: f64,
        spacing: f64,
    ) -> Result<Self> {
        let users = azimuths.len();
        check_dims(users, subcarriers, antennas)?;
        let mut per_user = Vec::with_capacity(users);
        for &theta in azimuths {
            let q = one_ring_covariance(antennas, theta, spread, spacing)?;
            let r = linalg::psd_sqrt(&q)?;
            per_user.push((q, r));
        }
        let mut covariances = Vec::with_capacity(users * subcarriers);
        let mut roots = Vec::with_capacity(users * subcarriers);
        for (q, r) in &per_user {
            for _ in 0..subcarriers {
                covariances.push(q.clone());
                roots.push(r.clone());
            }
        }
        Ok(ChannelStatistics {
            users,
            subcarriers,
            antennas,
            model: ChannelModel::OneRing {
                azimuths: azimuths.to_vec(),
                spread,
                spacing,
            },
            covariances,
            roots,
        })
    }

    /// Arbitrary PSD covariances in `(k, n)` row-major order (`k * N + n`).
    pub fn from_covariances(users: usize, subcarriers: usize, covariances: Vec<CMatrix>) -> Result<Self> {
        let antennas = covariances.first().map_or(0, |q| q.nrows());
        check_dims(users, subcarriers, antennas)?;
        if covariances.len() != users * subcarriers
            || covariances.iter().any(|q| q.nrows() != antennas || q.ncols() != antennas)
        {
            return Err(Error::Dimension("covariance list does not match K x N of M x M".into()));
        }
        let roots = covariances.iter().map(linalg::psd_sqrt).collect::<Result<Vec<_>>>()?;
        Ok(ChannelStatistics {
            users,
            subcarriers,
            antennas,
            model: ChannelModel::Custom,
            covariances,
            roots,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    /// `λ` when the model is i.i.d.
    pub fn iid_lambda(&self) -> Option<f64> {
        match self.model {
            ChannelModel::Iid { lambda } => Some(lambda),
            _ => None,
        }
    }

    pub fn covariance(&self, k: usize, n: usize) -> &CMatrix {
        &self.covariances[k * self.subcarriers + n]
    }

    pub fn covariance_sqrt(&self, k: usize, n: usize) -> &CMatrix {
        &self.roots[k * self.subcarriers + n]
    }

    /// Draws `h_{k,n} = Q^{1/2} g` from `rng`.
    pub fn draw<R: rand_core::RngCore + ?Sized>(&self, k: usize, n: usize, rng: &mut R) -> Vec<Complex64> {
        let g: Vec<Complex64> = (0..self.antennas).map(|_| complex_normal(rng)).collect();
        self.color(k, n, g)
    }

    /// Maps white `g ~ CN(0, I)` to `Q_{k,n}^{1/2} g`.
    pub fn color(&self, k: usize, n: usize, g: Vec<Complex64>) -> Vec<Complex64> {
        match self.model {
            ChannelModel::Iid { lambda } => {
                let s = math::sqrt(lambda);
                g.into_iter().map(|z| z * s).collect()
            }
            _ => {
                let r = self.covariance_sqrt(k, n);
                (0..self.antennas)
                    .map(|i| (0..self.antennas).map(|j| r[(i, j)] * g[j]).sum())
                    .collect()
            }
        }
    }
}

/// Covariance `Q_{k,n}` with bounds checking.
pub fn covariance_of(stats: &ChannelStatistics, k: usize, n: usize) -> Result<&CMatrix> {
    if k >= stats.users() || n >= stats.subcarriers() {
        return Err(Error::Dimension(format!(
            "(k={k}, n={n}) outside {}x{}",
            stats.users(),
            stats.subcarriers()
        )));
    }
    Ok(stats.covariance(k, n))
}

/// One-ring covariance of an `M`-antenna uniform linear array, trace-normalized to `M`.
pub fn one_ring_covariance(antennas: usize, azimuth: f64, spread: f64, spacing: f64) -> Result<CMatrix> {
    if !(spread >= 0.0) || spread > PI || !(spacing > 0.0) || !azimuth.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "one-ring parameters out of range (spread {spread}, spacing {spacing})"
        )));
    }
    let lag: Vec<Complex64> = (0..antennas)
        .map(|m| {
            let freq = 2.0 * PI * spacing * m as f64;
            if spread == 0.0 {
                Complex64::from_polar(1.0, freq * math::sin(azimuth))
            } else {
                let f = |phi: f64| {
                    let a = freq * math::sin(phi);
                    (math::cos(a), math::sin(a))
                };
                let (re, im) = adaptive_simpson(&f, azimuth - spread, azimuth + spread, 1e-13);
                Complex64::new(re, im) / (2.0 * spread)
            }
        })
        .collect();
    let mut q = CMatrix::from_fn(antennas, antennas, |p, r| {
        if p >= r {
            lag[p - r]
        } else {
            lag[r - p].conj()
        }
    });
    let tr = linalg::trace_re(&q);
    q *= Complex64::new(antennas as f64 / tr, 0.0);
    let (values, _) = linalg::hermitian_eigen(&q);
    if values[0] < -linalg::PSD_CLAMP * antennas as f64 {
        return Err(Error::NotPsd {
            min_eigenvalue: values[0],
        });
    }
    Ok(q)
}

/// Panels integrated independently; a single adaptive panel can stop early
/// when the integrand happens to agree at its five probe points.
const SIMPSON_PANELS: usize = 32;

fn adaptive_simpson<F: Fn(f64) -> (f64, f64)>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let width = (b - a) / SIMPSON_PANELS as f64;
    let panel_tol = tol * (b - a).max(1.0) / SIMPSON_PANELS as f64;
    (0..SIMPSON_PANELS).fold((0.0, 0.0), |acc, i| {
        let lo = a + width * i as f64;
        let hi = if i + 1 == SIMPSON_PANELS { b } else { lo + width };
        let m = 0.5 * (lo + hi);
        let (fa, fm, fb) = (f(lo), f(m), f(hi));
        let whole = simpson(lo, hi, fa, fm, fb);
        let part = simpson_step(f, lo, hi, fa, fm, fb, whole, panel_tol, 48);
        (acc.0 + part.0, acc.1 + part.1)
    })
}

fn simpson(a: f64, b: f64, fa: (f64, f64), fm: (f64, f64), fb: (f64, f64)) -> (f64, f64) {
    let h = (b - a) / 6.0;
    (h * (fa.0 + 4.0 * fm.0 + fb.0), h * (fa.1 + 4.0 * fm.1 + fb.1))
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> (f64, f64)>(
    f: &F,
    a: f64,
    b: f64,
    fa: (f64, f64),
    fm: (f64, f64),
    fb: (f64, f64),
    whole: (f64, f64),
    tol: f64,
    depth: u32,
) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = math::abs(left.0 + right.0 - whole.0).max(math::abs(left.1 + right.1 - whole.1));
    if depth == 0 || err <= 15.0 * tol {
        let corr = (
            (left.0 + right.0 - whole.0) / 15.0,
            (left.1 + right.1 - whole.1) / 15.0,
        );
        return (left.0 + right.0 + corr.0, left.1 + right.1 + corr.1);
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
    let r = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    (l.0 + r.0, l.1 + r.1)
}

/// Round-robin group assignment with equally spaced group azimuths.
pub fn group_azimuths(groups: usize, users: usize) -> Result<Vec<f64>> {
    if groups == 0 || groups > users {
        return Err(Error::InvalidParameter(format!(
            "group count {groups} outside 1..={users}"
        )));
    }
    let angle = |g: usize| {
        if groups == 1 {
            0.0
        } else {
            -AZIMUTH_SPAN + 2.0 * AZIMUTH_SPAN * g as f64 / (groups - 1) as f64
        }
    };
    Ok((0..users).map(|k| angle(k % groups)).collect())
}

/// Channel vectors `h_{k,n}` for every user and subcarrier.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    users: usize,
    subcarriers: usize,
    antennas: usize,
    h: Vec<Vec<Complex64>>,
}

impl ChannelRealization {
    /// `vectors` in `(k, n)` row-major order.
    pub fn new(users: usize, subcarriers: usize, antennas: usize, vectors: Vec<Vec<Complex64>>) -> Result<Self> {
        check_dims(users, subcarriers, antennas)?;
        if vectors.len() != users * subcarriers || vectors.iter().any(|v| v.len() != antennas) {
            return Err(Error::Dimension("realization does not match K x N x M".into()));
        }
        if vectors.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("non-finite channel entry".into()));
        }
        Ok(ChannelRealization {
            users,
            subcarriers,
            antennas,
            h: vectors,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn h(&self, k: usize, n: usize) -> &[Complex64] {
        &self.h[k * self.subcarriers + n]
    }
}

/// Samples every `h_{k,n}` from its own stream `stream.at(k, n)`.
pub fn sample_realization(stats: &ChannelStatistics, stream: RngStream) -> ChannelRealization {
    let (users, subcarriers) = (stats.users(), stats.subcarriers());
    let mut h = Vec::with_capacity(users * subcarriers);
    for k in 0..users {
        for n in 0..subcarriers {
            let mut rng = stream.at(k, n).rng();
            h.push(stats.draw(k, n, &mut rng));
        }
    }
    ChannelRealization {
        users,
        subcarriers,
        antennas: stats.antennas(),
        h,
    }
}
