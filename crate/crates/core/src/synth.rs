//! Seeded synthetic learning curves.
//!
//! Four curve kinds are produced: `asymptotic` learners following the model
//! curve, `never_learn` runs stuck at the guessing rate, `delayed` runs that
//! sit at the guessing rate before learning, and `custom` curves whose
//! parameters may leave the fitting box (an asymptote above 100 saturates at
//! 100, for example).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analyzer::DatasetProfile;
use crate::curve_model::{CurveParams, ParamBox};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::trace_io::{Trace, TraceCorpus, TraceRow};

/// Epochs over which a never-learner's losses settle onto their plateau.
const NEVER_LEARN_WARMUP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Asymptotic,
    NeverLearn,
    Delayed,
    Custom,
}

impl CurveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Asymptotic => "asymptotic",
            CurveKind::NeverLearn => "never_learn",
            CurveKind::Delayed => "delayed",
            CurveKind::Custom => "custom",
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asymptotic" => Ok(CurveKind::Asymptotic),
            "never_learn" => Ok(CurveKind::NeverLearn),
            "delayed" => Ok(CurveKind::Delayed),
            "custom" => Ok(CurveKind::Custom),
            other => Err(Error::InvalidSpec(format!("unknown curve kind {other:?}"))),
        }
    }
}

/// Exponential decay from `init` toward `floor` with additive Gaussian noise.
/// Training loss uses the same decay toward half the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub init: f64,
    /// Per-epoch decay rate.
    pub decay_rate: f64,
    pub floor: f64,
    pub noise_sigma: f64,
}

impl Default for LossModel {
    fn default() -> Self {
        Self { init: 2.3, decay_rate: 0.5, floor: 0.5, noise_sigma: 0.02 }
    }
}

impl LossModel {
    fn validate(&self) -> Result<()> {
        let ok = self.init.is_finite()
            && self.floor.is_finite()
            && self.floor >= 0.0
            && self.init >= self.floor
            && self.decay_rate >= 0.0
            && self.decay_rate.is_finite()
            && self.noise_sigma >= 0.0
            && self.noise_sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid loss model {self:?}")))
        }
    }

    fn level(&self, floor: f64, epoch: f64) -> f64 {
        floor + (self.init - floor) * (-self.decay_rate * epoch).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub kind: CurveKind,
    /// Curve parameters; ignored by `never_learn`.
    pub params: CurveParams,
    /// Epochs spent at the guessing rate; `delayed` only.
    pub delay: f64,
    pub acc_noise_sigma: f64,
    pub loss: LossModel,
    pub seed: u64,
}

impl CurveSpec {
    pub fn asymptotic(params: CurveParams, acc_noise_sigma: f64, seed: u64) -> Self {
        Self { kind: CurveKind::Asymptotic, params, delay: 0.0, acc_noise_sigma, loss: LossModel::default(), seed }
    }

    pub fn never_learn(acc_noise_sigma: f64, seed: u64) -> Self {
        Self {
            kind: CurveKind::NeverLearn,
            params: CurveParams::new(0.0, 1.0, 0.0),
            delay: 0.0,
            acc_noise_sigma,
            loss: LossModel::default(),
            seed,
        }
    }

    pub fn delayed(params: CurveParams, delay: f64, acc_noise_sigma: f64, seed: u64) -> Self {
        Self { kind: CurveKind::Delayed, params, delay, acc_noise_sigma, loss: LossModel::default(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::InvalidSpec(format!("delay must be nonnegative, got {}", self.delay)));
        }
        if !(self.acc_noise_sigma >= 0.0 && self.acc_noise_sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("accuracy noise must be nonnegative, got {}", self.acc_noise_sigma)));
        }
        self.loss.validate()?;
        let p = self.params;
        match self.kind {
            CurveKind::Asymptotic | CurveKind::Delayed if !ParamBox::default().contains(&p) => {
                Err(Error::InvalidSpec(format!("curve parameters {p:?} are outside the fitting box")))
            }
            CurveKind::Custom if !(p.a.is_finite() && p.b >= 1.0 && p.b.is_finite() && p.c.is_finite()) => {
                Err(Error::InvalidSpec(format!("custom curve needs finite a, c and b >= 1, got {p:?}")))
            }
            _ => Ok(()),
        }
    }

    /// The noiseless accuracy the run levels off at.
    pub fn true_asymptote(&self, guessing_rate: f64) -> f64 {
        match self.kind {
            CurveKind::NeverLearn => guessing_rate,
            CurveKind::Delayed => self.params.a.max(guessing_rate).min(100.0),
            _ => self.params.a.clamp(0.0, 100.0),
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

fn curve_value(p: &CurveParams, x: f64) -> f64 {
    // the curve only overflows far below zero accuracy
    p.evaluate(x).unwrap_or(f64::NEG_INFINITY)
}

/// Rows at epochs `E, 2E, ..., e_full`, deterministic in `spec.seed`.
pub fn generate_trace(
    model: &str,
    spec: &CurveSpec,
    profile: &DatasetProfile,
    epochs_per_iter: f64,
    e_full: f64,
) -> Result<Trace> {
    spec.validate()?;
    profile.validate()?;
    if !(epochs_per_iter > 0.0 && e_full >= epochs_per_iter) {
        return Err(Error::InvalidSpec(format!("bad horizon: E = {epochs_per_iter}, e_full = {e_full}")));
    }
    let iterations = (e_full / epochs_per_iter).round() as usize;
    let guess = profile.guessing_rate();
    let loss = spec.loss;
    let train_floor = 0.5 * loss.floor;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut plateau_reached = false;
    let mut rows = Vec::with_capacity(iterations);
    for k in 1..=iterations {
        let epoch = epochs_per_iter * k as f64;
        let x = k as f64;
        let (clean_acc, learning_since) = match spec.kind {
            CurveKind::Asymptotic | CurveKind::Custom => (curve_value(&spec.params, x), Some(0.0)),
            CurveKind::NeverLearn => (guess, None),
            CurveKind::Delayed if epoch < spec.delay => (guess, None),
            CurveKind::Delayed => {
                let shifted = x - spec.delay / epochs_per_iter;
                (curve_value(&spec.params, shifted).max(guess), Some(spec.delay))
            }
        };
        let val_acc = (clean_acc + gauss(&mut rng, spec.acc_noise_sigma)).clamp(0.0, 100.0);

        let (val_loss, train_loss) = match (spec.kind, learning_since) {
            (CurveKind::NeverLearn, _) => {
                let settled = epoch.min(NEVER_LEARN_WARMUP);
                let val = loss.level(loss.floor, settled);
                let train = loss.level(train_floor, settled);
                if epoch < NEVER_LEARN_WARMUP || !plateau_reached {
                    plateau_reached = epoch >= NEVER_LEARN_WARMUP;
                    (val, train)
                } else {
                    // the plateau is reached exactly at warmup and never undercut
                    let bump = gauss(&mut rng, loss.noise_sigma).abs();
                    (val + bump, train + gauss(&mut rng, loss.noise_sigma))
                }
            }
            (_, None) => {
                let val = loss.init + gauss(&mut rng, loss.noise_sigma);
                let train = loss.init + gauss(&mut rng, loss.noise_sigma);
                (val, train)
            }
            (_, Some(start)) => {
                let t = epoch - start;
                let val = loss.level(loss.floor, t) + gauss(&mut rng, loss.noise_sigma);
                let train = loss.level(train_floor, t) + gauss(&mut rng, loss.noise_sigma);
                (val, train)
            }
        };
        rows.push(TraceRow { epoch, val_acc, val_loss: val_loss.max(0.0), train_loss: Some(train_loss.max(0.0)) });
    }
    Ok(Trace { model: model.to_string(), rows, profile: profile.name.clone() })
}

/// Uniform range; `lo == hi` is a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{},{}", self.lo, self.hi)
        }
    }
}

/// One weighted component of a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationGroup {
    pub name: String,
    pub kind: CurveKind,
    pub weight: f64,
    pub a: Range,
    pub b: Range,
    pub c: Range,
    pub delay: Range,
    pub acc_noise_sigma: f64,
    pub loss: LossModel,
}

impl PopulationGroup {
    pub fn new(name: &str, kind: CurveKind, weight: f64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            weight,
            a: Range::new(40.0, 90.0),
            b: Range::new(1.8, 3.0),
            c: Range::new(2.0, 4.0),
            delay: Range::fixed(0.0),
            acc_noise_sigma: 0.3,
            loss: LossModel::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidSpec(format!("group {:?}: weight must be nonnegative", self.name)));
        }
        for (label, r) in [("a", self.a), ("b", self.b), ("c", self.c), ("delay", self.delay)] {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(Error::InvalidSpec(format!("group {:?}: bad {label} range {r}", self.name)));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> CurveSpec {
        let params = CurveParams::new(self.a.sample(rng), self.b.sample(rng), self.c.sample(rng));
        let delay = self.delay.sample(rng);
        let seed = rng.random();
        CurveSpec {
            kind: self.kind,
            params,
            delay: if self.kind == CurveKind::Delayed { delay } else { 0.0 },
            acc_noise_sigma: self.acc_noise_sigma,
            loss: self.loss,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub groups: Vec<PopulationGroup>,
}

impl Default for Population {
    /// 70% asymptotic learners, 15% never-learners, 15% delayed learners.
    fn default() -> Self {
        let asymptotic = PopulationGroup::new("asymptotic", CurveKind::Asymptotic, 0.70);
        let never = PopulationGroup::new("never_learn", CurveKind::NeverLearn, 0.15);
        let delayed = PopulationGroup {
            a: Range::new(30.0, 60.0),
            delay: Range::new(4.0, 10.0),
            ..PopulationGroup::new("delayed", CurveKind::Delayed, 0.15)
        };
        Self { groups: vec![asymptotic, never, delayed] }
    }
}

const GROUP_KEYS: [&str; 11] = [
    "kind", "weight", "a", "b", "c", "delay", "acc_noise_sigma", "loss_init", "loss_decay_rate", "loss_floor",
    "loss_noise_sigma",
];

impl Population {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidSpec("population has no groups".into()));
        }
        for g in &self.groups {
            g.validate()?;
        }
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidSpec("population weights must sum to a positive number".into()));
        }
        Ok(())
    }

    /// Exact allocation of `n` draws: floors of the weighted shares, the
    /// remainder going to the largest fractional parts (earlier groups first
    /// on ties).
    pub fn allocate(&self, n: usize) -> Vec<usize> {
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        let shares: Vec<f64> = self.groups.iter().map(|g| n as f64 * g.weight / total).collect();
        let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        let mut order: Vec<usize> = (0..shares.len()).collect();
        order.sort_by(|&i, &j| (shares[j] - shares[j].floor()).total_cmp(&(shares[i] - shares[i].floor())).then(i.cmp(&j)));
        let remainder = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(remainder) {
            counts[i] += 1;
        }
        counts
    }

    /// Reads the `key=value` population format: `groups=` lists group names,
    /// then `<group>.<field>=` lines set each group. Ranges are `lo,hi` or a
    /// single fixed value.
    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        let names: Vec<String> =
            doc.parse_list("groups")?.ok_or_else(|| Error::InvalidSpec("population needs a groups= line".into()))?;
        let mut allowed = vec!["groups".to_string()];
        for name in &names {
            allowed.extend(GROUP_KEYS.iter().map(|k| format!("{name}.{k}")));
        }
        doc.reject_unknown(&allowed.iter().map(String::as_str).collect::<Vec<_>>())?;

        let mut groups = Vec::with_capacity(names.len());
        for name in &names {
            let key = |k: &str| format!("{name}.{k}");
            let kind: CurveKind = doc.require::<String>(&key("kind"))?.parse()?;
            let mut g = PopulationGroup::new(name, kind, doc.require(&key("weight"))?);
            let range = |k: &str, current: Range| -> Result<Range> {
                Ok(match doc.parse_list::<f64>(&key(k))?.as_deref() {
                    None => current,
                    Some([v]) => Range::fixed(*v),
                    Some([lo, hi]) => Range::new(*lo, *hi),
                    Some(_) => return Err(Error::InvalidSpec(format!("{}: expected lo,hi or a single value", key(k)))),
                })
            };
            g.a = range("a", g.a)?;
            g.b = range("b", g.b)?;
            g.c = range("c", g.c)?;
            g.delay = range("delay", g.delay)?;
            g.acc_noise_sigma = doc.parse_value(&key("acc_noise_sigma"))?.unwrap_or(g.acc_noise_sigma);
            g.loss.init = doc.parse_value(&key("loss_init"))?.unwrap_or(g.loss.init);
            g.loss.decay_rate = doc.parse_value(&key("loss_decay_rate"))?.unwrap_or(g.loss.decay_rate);
            g.loss.floor = doc.parse_value(&key("loss_floor"))?.unwrap_or(g.loss.floor);
            g.loss.noise_sigma = doc.parse_value(&key("loss_noise_sigma"))?.unwrap_or(g.loss.noise_sigma);
            groups.push(g);
        }
        let population = Self { groups };
        population.validate()?;
        Ok(population)
    }

    pub fn render(&self) -> String {
        let mut doc = KvDoc::default();
        doc.push("groups", self.groups.iter().map(|g| g.name.as_str()).collect::<Vec<_>>().join(","));
        for g in &self.groups {
            let key = |k: &str| format!("{}.{k}", g.name);
            doc.push(key("kind"), g.kind);
            doc.push(key("weight"), g.weight);
            doc.push(key("a"), g.a);
            doc.push(key("b"), g.b);
            doc.push(key("c"), g.c);
            doc.push(key("delay"), g.delay);
            doc.push(key("acc_noise_sigma"), g.acc_noise_sigma);
            doc.push(key("loss_init"), g.loss.init);
            doc.push(key("loss_decay_rate"), g.loss.decay_rate);
            doc.push(key("loss_floor"), g.loss.floor);
            doc.push(key("loss_noise_sigma"), g.loss.noise_sigma);
        }
        doc.to_string()
    }
}

/// A generated corpus with the spec behind each trace, in model id order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub corpus: TraceCorpus,
    pub specs: Vec<(String, CurveSpec)>,
}

impl GeneratedCorpus {
    /// `model,kind,a,b,c,delay,true_asymptote` rows describing each trace.
    pub fn truth_csv(&self) -> String {
        let guess = self.corpus.profile.guessing_rate();
        let mut out = String::from("model,kind,a,b,c,delay,true_asymptote\n");
        for (model, s) in &self.specs {
            out.push_str(&format!(
                "{model},{},{},{},{},{},{}\n",
                s.kind,
                s.params.a,
                s.params.b,
                s.params.c,
                s.delay,
                s.true_asymptote(guess)
            ));
        }
        out
    }
}

pub fn model_id(i: usize) -> String {
    format!("model-{:04}", i + 1)
}

/// `n` traces drawn from `population`, ids `model-0001...`, reproducible in `seed`.
pub fn generate_corpus(
    population: &Population,
    n: usize,
    profile: &DatasetProfile,
    epochs_per_iter: f64,
    e_full: f64,
    seed: u64,
) -> Result<GeneratedCorpus> {
    population.validate()?;
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    for (g, count) in population.allocate(n).into_iter().enumerate() {
        labels.extend(std::iter::repeat_n(g, count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);

    let mut traces = Vec::with_capacity(n);
    let mut specs = Vec::with_capacity(n);
    for (i, &g) in labels.iter().enumerate() {
        let model = model_id(i);
        let spec = population.groups[g].draw(&mut rng);
        traces.push(generate_trace(&model, &spec, profile, epochs_per_iter, e_full)?);
        specs.push((model, spec));
    }
    let corpus = TraceCorpus { traces, profile: profile.clone(), epochs_per_iter, e_full };
    corpus.validate()?;
    Ok(GeneratedCorpus { corpus, specs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten() -> DatasetProfile {
        DatasetProfile::balanced("ten", 10)
    }

    #[test]
    fn noiseless_asymptotic_matches_curve() {
        let p = CurveParams::new(85.0, 1.5, 2.0);
        let t = generate_trace("m", &CurveSpec::asymptotic(p, 0.0, 1), &ten(), 0.5, 20.0).unwrap();
        assert_eq!(t.rows.len(), 40);
        assert_eq!(t.rows[19].epoch, 10.0);
        assert_eq!(t.rows[19].val_acc, p.evaluate(20.0).unwrap());
    }

    #[test]
    fn noiseless_never_learn_sits_at_guessing_rate() {
        let t = generate_trace("m", &CurveSpec::never_learn(0.0, 1), &ten(), 0.5, 20.0).unwrap();
        assert!(t.rows.iter().all(|r| r.val_acc == 10.0));
        // loss minimum reached at warmup and never undercut
        let plateau = t.rows[1].val_loss;
        assert!(t.rows[2..].iter().all(|r| r.val_loss >= plateau));
        assert!(t.rows[0].val_loss > plateau);
    }

    #[test]
    fn delayed_waits_then_rises() {
        let spec = CurveSpec::delayed(CurveParams::new(60.0, 2.0, 2.0), 8.0, 0.3, 3);
        let t = generate_trace("m", &spec, &ten(), 0.5, 20.0).unwrap();
        for r in &t.rows {
            if r.epoch < 8.0 {
                assert!((r.val_acc - 10.0).abs() < 2.0, "epoch {} acc {}", r.epoch, r.val_acc);
            }
        }
        assert!(t.rows.last().unwrap().val_acc > 55.0);
    }

    #[test]
    fn custom_may_leave_the_box() {
        let spec = CurveSpec { kind: CurveKind::Custom, ..CurveSpec::asymptotic(CurveParams::new(110.0, 1.5, 2.0), 0.0, 1) };
        let t = generate_trace("m", &spec, &ten(), 0.5, 20.0).unwrap();
        assert_eq!(t.rows.last().unwrap().val_acc, 100.0);
        let asym = CurveSpec { kind: CurveKind::Asymptotic, ..spec };
        assert!(matches!(asym.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn invalid_specs() {
        let mut s = CurveSpec::never_learn(-1.0, 1);
        assert!(s.validate().is_err());
        s.acc_noise_sigma = 0.0;
        s.delay = -1.0;
        assert!(s.validate().is_err());
        s.delay = 0.0;
        s.loss.floor = 5.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn allocation_is_exact() {
        let pop = Population::default();
        assert_eq!(pop.allocate(200), vec![140, 30, 30]);
        assert_eq!(pop.allocate(7).iter().sum::<usize>(), 7);
        assert_eq!(pop.allocate(7), vec![5, 1, 1]);
        assert_eq!(pop.allocate(0), vec![0, 0, 0]);
    }

    #[test]
    fn population_round_trip_and_errors() {
        let pop = Population::default();
        assert_eq!(Population::parse(&pop.render()).unwrap(), pop);
        assert!(Population::parse("groups=x\nx.kind=asymptotic\n").is_err());
        assert!(Population::parse("groups=x\nx.kind=sideways\nx.weight=1\n").is_err());
        assert!(Population::parse("groups=x\nx.kind=never_learn\nx.weight=0\n").is_err());
        assert!(Population::parse("groups=x\nx.kind=never_learn\nx.weight=1\ny.weight=1\n").is_err());
        let p = Population::parse("groups=x\nx.kind=asymptotic\nx.weight=1\nx.a=70\n").unwrap();
        assert_eq!(p.groups[0].a, Range::fixed(70.0));
    }

    #[test]
    fn corpus_is_deterministic_and_weighted() {
        let pop = Population::default();
        let a = generate_corpus(&pop, 40, &ten(), 0.5, 20.0, 7).unwrap();
        let b = generate_corpus(&pop, 40, &ten(), 0.5, 20.0, 7).unwrap();
        let c = generate_corpus(&pop, 40, &ten(), 0.5, 20.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.corpus, c.corpus);
        assert_eq!(a.corpus.traces[0].model, "model-0001");
        assert_eq!(a.corpus.traces[39].model, "model-0040");
        let count = |k: CurveKind| a.specs.iter().filter(|(_, s)| s.kind == k).count();
        assert_eq!((count(CurveKind::Asymptotic), count(CurveKind::NeverLearn), count(CurveKind::Delayed)), (28, 6, 6));
    }
}
