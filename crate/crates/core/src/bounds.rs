//! Closed-form loads: the optimal communication load, the optimal max-link
//! load, the server-link cut-set terms, the uncoded baseline and the lower
//! convex envelope of tradeoff points. Everything is exact.

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{from_biguint, int, ratio, Rational};
use crate::subset::binomial;

fn check_range(servers: usize, load: usize, reducers: usize) -> Result<()> {
    if servers == 0 {
        return Err(Error::Range("K must be positive".into()));
    }
    if !(1..=servers).contains(&load) {
        return Err(Error::Range(format!("r = {load} must lie in [1, K = {servers}]")));
    }
    if !(1..=servers).contains(&reducers) {
        return Err(Error::Range(format!("s = {reducers} must lie in [1, K = {servers}]")));
    }
    Ok(())
}

/// Minimum total communication load L*(r) of the coded scheme with `reducers`
/// servers reducing each output function.
pub fn l_star(servers: usize, load: usize, reducers: usize) -> Result<Rational> {
    check_range(servers, load, reducers)?;
    let (k, r, s) = (servers as i64, load as i64, reducers as i64);
    let denominator = from_biguint(binomial(k, r) * binomial(k, s)) * int(r);
    let numerator = ((r + 1).max(s)..=(r + s).min(k))
        .map(|t| {
            let term = binomial(k, t) * binomial(t - 2, r - 1) * binomial(r, t - s);
            from_biguint(term) * int(t)
        })
        .fold(Rational::zero(), |acc, term| acc + term);
    Ok(numerator / denominator)
}

/// Optimal max-link load D*(r) = L*(r)/K + (s/K)(1 − r/K).
pub fn d_star(servers: usize, load: usize, reducers: usize) -> Result<Rational> {
    let l = l_star(servers, load, reducers)?;
    Ok(l / int(servers as i64) + downlink_share(servers, load, reducers))
}

/// (s/K)(1 − r/K): the per-server share of the downlink cut.
fn downlink_share(servers: usize, load: usize, reducers: usize) -> Rational {
    ratio(reducers as i64, servers as i64) * (int(1) - ratio(load as i64, servers as i64))
}

/// Total load when every needed value is unicast uncoded: s(1 − r/K).
pub fn uncoded_load(servers: usize, load: usize, reducers: usize) -> Result<Rational> {
    check_range(servers, load, reducers)?;
    Ok(int(reducers as i64) * (int(1) - ratio(load as i64, servers as i64)))
}

/// Lower bounds on the normalized traffic crossing the K server links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConverseTerms {
    /// Σ_k R^up over server links is at least this (= L*(r)).
    pub uplink: Rational,
    /// Σ_k R^down over server links is at least this (= s(1 − r/K)).
    pub downlink: Rational,
    /// (uplink + downlink)/K, a lower bound on the heaviest server link.
    pub per_link: Rational,
}

pub fn converse_terms(servers: usize, load: usize, reducers: usize) -> Result<ConverseTerms> {
    let uplink = l_star(servers, load, reducers)?;
    let downlink = uncoded_load(servers, load, reducers)?;
    let per_link = (&uplink + &downlink) / int(servers as i64);
    Ok(ConverseTerms { uplink, downlink, per_link })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TradeoffPoint {
    pub load: usize,
    pub reducers: usize,
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub communication: Rational,
    #[serde(serialize_with = "crate::exact::serialize_ratio")]
    pub max_link: Rational,
}

/// (r, L*(r), D*(r)) for every integer r in [1, K].
pub fn tradeoff_points(servers: usize, reducers: usize) -> Result<Vec<TradeoffPoint>> {
    (1..=servers)
        .map(|load| {
            Ok(TradeoffPoint {
                load,
                reducers,
                communication: l_star(servers, load, reducers)?,
                max_link: d_star(servers, load, reducers)?,
            })
        })
        .collect()
}

/// Piecewise-linear lower convex envelope of a finite point set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvexEnvelope {
    points: Vec<(Rational, Rational)>,
    hull: Vec<(Rational, Rational)>,
}

fn cross(o: &(Rational, Rational), a: &(Rational, Rational), b: &(Rational, Rational)) -> Rational {
    (&a.0 - &o.0) * (&b.1 - &o.1) - (&a.1 - &o.1) * (&b.0 - &o.0)
}

impl ConvexEnvelope {
    /// Monotone-chain lower hull. Duplicate abscissae keep the lowest ordinate.
    pub fn new(mut points: Vec<(Rational, Rational)>) -> Self {
        points.sort();
        points.dedup_by(|later, earlier| later.0 == earlier.0);
        let mut hull: Vec<(Rational, Rational)> = Vec::with_capacity(points.len());
        for p in &points {
            while hull.len() >= 2 && !cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p).is_positive() {
                hull.pop();
            }
            hull.push(p.clone());
        }
        ConvexEnvelope { points, hull }
    }

    pub fn from_tradeoff(points: &[TradeoffPoint]) -> Self {
        Self::new(points.iter().map(|p| (int(p.load as i64), p.max_link.clone())).collect())
    }

    pub fn vertices(&self) -> &[(Rational, Rational)] {
        &self.hull
    }

    /// Envelope value at `x`, `None` outside the sampled range.
    pub fn eval(&self, x: &Rational) -> Option<Rational> {
        let first = self.hull.first()?;
        let last = self.hull.last()?;
        if x < &first.0 || x > &last.0 {
            return None;
        }
        if self.hull.len() == 1 {
            return Some(first.1.clone());
        }
        let i = self.hull.windows(2).position(|w| x <= &w[1].0)?;
        let (a, b) = (&self.hull[i], &self.hull[i + 1]);
        Some(&a.1 + (&b.1 - &a.1) * (x - &a.0) / (&b.0 - &a.0))
    }

    /// True when every input point lies on the envelope.
    pub fn is_tight(&self) -> bool {
        self.points.iter().all(|(x, y)| self.eval(x).as_ref() == Some(y))
    }

    pub fn is_non_increasing(&self) -> bool {
        self.hull.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}
