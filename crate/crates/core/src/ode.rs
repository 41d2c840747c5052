//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 8(5,3)).
//!
//! States are fixed-size `[f64; N]` arrays so the right-hand sides of the
//! small systems in this crate stay on the stack. Output is produced by
//! clamping steps onto the requested sample times rather than by dense
//! interpolation, so every reported sample is a genuine integrator state.

/// A first-order system `dy/dt = f(t, y)`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N], dydt: &mut [f64; N]);

    /// Characteristic magnitude of component `i`; the absolute tolerance is
    /// applied relative to it.
    fn abs_scale(&self, _i: usize) -> f64 {
        1.0
    }

    /// Hook run after every accepted step. Implementations may project the
    /// state back onto a constraint manifold or abort the integration.
    fn after_step(&self, _t: f64, _y: &mut [f64; N]) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest step magnitude, seconds. `f64::INFINITY` for no limit.
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-12, max_step: f64::INFINITY, initial_step: None, max_steps: 2_000_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeError {
    StepSizeUnderflow { t: f64, h: f64 },
    MaxStepsExceeded { t: f64 },
    NonFinite { t: f64 },
    Aborted { t: f64, reason: String },
}

impl OdeError {
    /// Last time at which the state was known to be good.
    pub fn time(&self) -> f64 {
        match self {
            OdeError::StepSizeUnderflow { t, .. }
            | OdeError::MaxStepsExceeded { t }
            | OdeError::NonFinite { t }
            | OdeError::Aborted { t, .. } => *t,
        }
    }
}

impl std::fmt::Display for OdeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OdeError::StepSizeUnderflow { t, h } => {
                write!(f, "step size underflow (h = {h:e}) at t = {t:e}")
            }
            OdeError::MaxStepsExceeded { t } => write!(f, "maximum step count exceeded at t = {t:e}"),
            OdeError::NonFinite { t } => write!(f, "non-finite state after t = {t:e}"),
            OdeError::Aborted { t, reason } => write!(f, "aborted at t = {t:e}: {reason}"),
        }
    }
}

impl std::error::Error for OdeError {}

impl From<OdeError> for crate::Error {
    fn from(e: OdeError) -> Self {
        crate::Error::IntegrationFailure { t: e.time(), reason: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolverStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

/// `t0, t0 + dt, ...` up to and including `t_end` (appended if the grid misses it).
/// Works for either integration direction; `dt` is taken by magnitude.
pub fn uniform_grid(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let span = t_end - t0;
    if span == 0.0 || !(dt > 0.0) {
        return vec![t0];
    }
    let n = (span.abs() / dt).floor() as usize;
    let dir = span.signum();
    let mut out: Vec<f64> = (0..=n).map(|k| t0 + dir * dt * k as f64).collect();
    let last = *out.last().unwrap();
    if (t_end - last).abs() > 1e-9 * dt {
        out.push(t_end);
    } else if let Some(l) = out.last_mut() {
        *l = t_end;
    }
    out
}

// Dormand-Prince 8(5,3) coefficients (Hairer, Norsett & Wanner).
#[allow(clippy::excessive_precision)]
mod dop853 {
    pub const C2: f64 = 0.526001519587677318785587544488e-01;
    pub const C3: f64 = 0.789002279381515978178381316732e-01;
    pub const C4: f64 = 0.118350341907227396726757197510e+00;
    pub const C5: f64 = 0.281649658092772603273242802490e+00;
    pub const C6: f64 = 0.333333333333333333333333333333e+00;
    pub const C7: f64 = 0.25e+00;
    pub const C8: f64 = 0.307692307692307692307692307692e+00;
    pub const C9: f64 = 0.651282051282051282051282051282e+00;
    pub const C10: f64 = 0.6e+00;
    pub const C11: f64 = 0.857142857142857142857142857142e+00;

    pub const B1: f64 = 5.42937341165687622380535766363e-2;
    pub const B6: f64 = 4.45031289275240888144113950566e0;
    pub const B7: f64 = 1.89151789931450038304281599044e0;
    pub const B8: f64 = -5.8012039600105847814672114227e0;
    pub const B9: f64 = 3.1116436695781989440891606237e-1;
    pub const B10: f64 = -1.52160949662516078556178806805e-1;
    pub const B11: f64 = 2.01365400804030348374776537501e-1;
    pub const B12: f64 = 4.47106157277725905176885569043e-2;

    pub const BHH1: f64 = 0.244094488188976377952755905512e+00;
    pub const BHH2: f64 = 0.733846688281611857341361741547e+00;
    pub const BHH3: f64 = 0.220588235294117647058823529412e-01;

    pub const ER1: f64 = 0.1312004499419488073250102996e-01;
    pub const ER6: f64 = -0.1225156446376204440720569753e+01;
    pub const ER7: f64 = -0.4957589496572501915214079952e+00;
    pub const ER8: f64 = 0.1664377182454986536961530415e+01;
    pub const ER9: f64 = -0.3503288487499736816886487290e+00;
    pub const ER10: f64 = 0.3341791187130174790297318841e+00;
    pub const ER11: f64 = 0.8192320648511571246570742613e-01;
    pub const ER12: f64 = -0.2235530786388629525884427845e-01;

    pub const A21: f64 = 5.26001519587677318785587544488e-2;
    pub const A31: f64 = 1.97250569845378994544595329183e-2;
    pub const A32: f64 = 5.91751709536136983633785987549e-2;
    pub const A41: f64 = 2.95875854768068491816892993775e-2;
    pub const A43: f64 = 8.87627564304205475450678981324e-2;
    pub const A51: f64 = 2.41365134159266685502369798665e-1;
    pub const A53: f64 = -8.84549479328286085344864962717e-1;
    pub const A54: f64 = 9.24834003261792003115737966543e-1;
    pub const A61: f64 = 3.7037037037037037037037037037e-2;
    pub const A64: f64 = 1.70828608729473871279604482173e-1;
    pub const A65: f64 = 1.25467687566822425016691814123e-1;
    pub const A71: f64 = 3.7109375e-2;
    pub const A74: f64 = 1.70252211019544039314978060272e-1;
    pub const A75: f64 = 6.02165389804559606850219397283e-2;
    pub const A76: f64 = -1.7578125e-2;
    pub const A81: f64 = 3.70920001185047927108779319836e-2;
    pub const A84: f64 = 1.70383925712239993810214054705e-1;
    pub const A85: f64 = 1.07262030446373284651809199168e-1;
    pub const A86: f64 = -1.53194377486244017527936158236e-2;
    pub const A87: f64 = 8.27378916381402288758473766002e-3;
    pub const A91: f64 = 6.24110958716075717114429577812e-1;
    pub const A94: f64 = -3.36089262944694129406857109825e0;
    pub const A95: f64 = -8.68219346841726006818189891453e-1;
    pub const A96: f64 = 2.75920996994467083049415600797e1;
    pub const A97: f64 = 2.01540675504778934086186788979e1;
    pub const A98: f64 = -4.34898841810699588477366255144e1;
    pub const A101: f64 = 4.77662536438264365890433908527e-1;
    pub const A104: f64 = -2.48811461997166764192642586468e0;
    pub const A105: f64 = -5.90290826836842996371446475743e-1;
    pub const A106: f64 = 2.12300514481811942347288949897e1;
    pub const A107: f64 = 1.52792336328824235832596922938e1;
    pub const A108: f64 = -3.32882109689848629194453265587e1;
    pub const A109: f64 = -2.03312017085086261358222928593e-2;
    pub const A111: f64 = -9.3714243008598732571704021658e-1;
    pub const A114: f64 = 5.18637242884406370830023853209e0;
    pub const A115: f64 = 1.09143734899672957818500254654e0;
    pub const A116: f64 = -8.14978701074692612513997267357e0;
    pub const A117: f64 = -1.85200656599969598641566180701e1;
    pub const A118: f64 = 2.27394870993505042818970056734e1;
    pub const A119: f64 = 2.49360555267965238987089396762e0;
    pub const A1110: f64 = -3.0467644718982195003823669022e0;
    pub const A121: f64 = 2.27331014751653820792359768449e0;
    pub const A124: f64 = -1.05344954667372501984066689879e1;
    pub const A125: f64 = -2.00087205822486249909675718444e0;
    pub const A126: f64 = -1.79589318631187989172765950534e1;
    pub const A127: f64 = 2.79488845294199600508499808837e1;
    pub const A128: f64 = -2.85899827713502369474065508674e0;
    pub const A129: f64 = -8.87285693353062954433549289258e0;
    pub const A1210: f64 = 1.23605671757943030647266201528e1;
    pub const A1211: f64 = 6.43392746015763530355970484046e-1;
}

#[inline(always)]
fn combine<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

struct Stepper<'a, S, const N: usize> {
    sys: &'a S,
    opts: SolverOptions,
    stats: SolverStats,
    atol: [f64; N],
}

impl<'a, S: OdeSystem<N>, const N: usize> Stepper<'a, S, N> {
    fn eval(&mut self, t: f64, y: &[f64; N]) -> [f64; N] {
        let mut dy = [0.0; N];
        self.sys.rhs(t, y, &mut dy);
        self.stats.rhs_evals += 1;
        dy
    }

    /// One trial step. Returns the candidate state and the scaled error norm.
    fn trial(&mut self, t: f64, y: &[f64; N], k1: &[f64; N], h: f64) -> ([f64; N], f64) {
        use dop853::*;
        let k2 = self.eval(t + C2 * h, &combine(y, h, &[(A21, k1)]));
        let k3 = self.eval(t + C3 * h, &combine(y, h, &[(A31, k1), (A32, &k2)]));
        let k4 = self.eval(t + C4 * h, &combine(y, h, &[(A41, k1), (A43, &k3)]));
        let k5 = self.eval(t + C5 * h, &combine(y, h, &[(A51, k1), (A53, &k3), (A54, &k4)]));
        let k6 = self.eval(t + C6 * h, &combine(y, h, &[(A61, k1), (A64, &k4), (A65, &k5)]));
        let k7 = self.eval(t + C7 * h, &combine(y, h, &[(A71, k1), (A74, &k4), (A75, &k5), (A76, &k6)]));
        let k8 = self.eval(t + C8 * h, &combine(y, h, &[(A81, k1), (A84, &k4), (A85, &k5), (A86, &k6), (A87, &k7)]));
        let k9 = self
            .eval(t + C9 * h, &combine(y, h, &[(A91, k1), (A94, &k4), (A95, &k5), (A96, &k6), (A97, &k7), (A98, &k8)]));
        let k10 = self.eval(
            t + C10 * h,
            &combine(y, h, &[(A101, k1), (A104, &k4), (A105, &k5), (A106, &k6), (A107, &k7), (A108, &k8), (A109, &k9)]),
        );
        let k11 = self.eval(
            t + C11 * h,
            &combine(
                y,
                h,
                &[
                    (A111, k1),
                    (A114, &k4),
                    (A115, &k5),
                    (A116, &k6),
                    (A117, &k7),
                    (A118, &k8),
                    (A119, &k9),
                    (A1110, &k10),
                ],
            ),
        );
        let k12 = self.eval(
            t + h,
            &combine(
                y,
                h,
                &[
                    (A121, k1),
                    (A124, &k4),
                    (A125, &k5),
                    (A126, &k6),
                    (A127, &k7),
                    (A128, &k8),
                    (A129, &k9),
                    (A1210, &k10),
                    (A1211, &k11),
                ],
            ),
        );

        let mut y_new = *y;
        let mut err5 = 0.0;
        let mut err3 = 0.0;
        for i in 0..N {
            let bk = B1 * k1[i]
                + B6 * k6[i]
                + B7 * k7[i]
                + B8 * k8[i]
                + B9 * k9[i]
                + B10 * k10[i]
                + B11 * k11[i]
                + B12 * k12[i];
            y_new[i] = y[i] + h * bk;
            let e3 = bk - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
            let e5 = ER1 * k1[i]
                + ER6 * k6[i]
                + ER7 * k7[i]
                + ER8 * k8[i]
                + ER9 * k9[i]
                + ER10 * k10[i]
                + ER11 * k11[i]
                + ER12 * k12[i];
            let sk = self.atol[i] + self.opts.rel_tol * y[i].abs().max(y_new[i].abs());
            err5 += (e5 / sk).powi(2);
            err3 += (e3 / sk).powi(2);
        }
        let mut deno = err5 + 0.01 * err3;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err5 * (1.0 / (N as f64 * deno)).sqrt();
        (y_new, err)
    }

    fn initial_step(&mut self, t: f64, y: &[f64; N], f0: &[f64; N], dir: f64) -> f64 {
        // Hairer's starting-step heuristic.
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..N {
            let sk = self.atol[i] + self.opts.rel_tol * y[i].abs();
            dnf += (f0[i] / sk).powi(2);
            dny += (y[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(self.opts.max_step);
        let y1 = combine(y, dir * h, &[(1.0, f0)]);
        let f1 = self.eval(t + dir * h, &y1);
        let mut der2 = 0.0;
        for i in 0..N {
            let sk = self.atol[i] + self.opts.rel_tol * y[i].abs();
            der2 += ((f1[i] - f0[i]) / sk).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(1.0 / 8.0) };
        (100.0 * h).min(h1).min(self.opts.max_step)
    }
}

/// Integrates `sys` from `t0` to `t_end`, invoking `observer` at every time in
/// `samples` (which must be monotone in the integration direction and lie in
/// the closed span). Returns the final state and solver statistics.
pub fn integrate<S, F, const N: usize>(
    sys: &S,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &SolverOptions,
    samples: &[f64],
    mut observer: F,
) -> Result<([f64; N], SolverStats), OdeError>
where
    S: OdeSystem<N>,
    F: FnMut(f64, &[f64; N]),
{
    let mut atol = [0.0; N];
    for (i, a) in atol.iter_mut().enumerate() {
        *a = opts.abs_tol * sys.abs_scale(i);
    }
    let mut st = Stepper { sys, opts: *opts, stats: SolverStats::default(), atol };

    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut next_sample = 0usize;
    let emit = |t: f64, y: &[f64; N], next: &mut usize, obs: &mut F| {
        while *next < samples.len() && (samples[*next] - t) * dir <= 0.0 {
            obs(t, y);
            *next += 1;
        }
    };
    emit(t, &y, &mut next_sample, &mut observer);
    if t0 == t_end {
        return Ok((y, st.stats));
    }

    let mut k1 = st.eval(t, &y);
    let mut h = match opts.initial_step {
        Some(h) => h.abs().min(opts.max_step),
        None => st.initial_step(t, &y, &k1, dir),
    };
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;
    let beta = 0.0;
    let expo1 = 1.0 / 8.0 - beta * 0.2;
    let safe = 0.9;
    let (facc1, facc2) = (1.0 / 0.333, 1.0 / 6.0);

    loop {
        if st.stats.accepted + st.stats.rejected >= opts.max_steps {
            return Err(OdeError::MaxStepsExceeded { t });
        }
        // Land exactly on the next sample time or the end of the span.
        let target = if next_sample < samples.len() { samples[next_sample] } else { t_end };
        let remaining = (target - t) * dir;
        let mut clamped = false;
        let mut h_try = h.min(opts.max_step);
        if h_try >= remaining {
            h_try = remaining;
            clamped = true;
        }
        if h_try <= 1e-14 * t.abs().max(1e-30) && !clamped {
            return Err(OdeError::StepSizeUnderflow { t, h: h_try });
        }

        let (y_new, err) = st.trial(t, &y, &k1, dir * h_try);
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            if h_try < 1e-14 * t.abs().max(1e-30) {
                return Err(OdeError::NonFinite { t });
            }
            h = h_try * 0.1;
            st.stats.rejected += 1;
            last_rejected = true;
            continue;
        }
        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let mut fac = fac11 / err_old.powf(beta);
            fac = (fac / safe).clamp(facc2, facc1);
            let mut h_new = h_try / fac;
            err_old = err.max(1e-4);
            if last_rejected {
                h_new = h_new.min(h_try);
            }
            last_rejected = false;
            st.stats.accepted += 1;

            t = if clamped { target } else { t + dir * h_try };
            y = y_new;
            sys.after_step(t, &mut y).map_err(|reason| OdeError::Aborted { t, reason })?;
            k1 = st.eval(t, &y);
            emit(t, &y, &mut next_sample, &mut observer);
            // A step shortened to hit a sample says nothing about the natural
            // step size; keep the previous proposal in that case.
            h = if clamped { h.max(h_new) } else { h_new };
            if clamped && target == t_end && next_sample >= samples.len() {
                break;
            }
            if (t_end - t) * dir <= 0.0 {
                break;
            }
        } else {
            h = h_try / facc1.min(fac11 / safe);
            st.stats.rejected += 1;
            last_rejected = true;
            if h <= 1e-14 * t.abs().max(1e-30) {
                return Err(OdeError::StepSizeUnderflow { t, h });
            }
        }
    }
    Ok((y, st.stats))
}
