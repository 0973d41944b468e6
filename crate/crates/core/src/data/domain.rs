use super::VideoSample;
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::seq::index;
use serde::{Deserialize, Serialize};

/// Target/shifted composition of an unlabeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMixSpec {
    /// Fraction of the pool drawn from the target domain.
    pub rho: f64,
    pub total: usize,
}

impl DomainMixSpec {
    pub fn target_count(&self) -> usize {
        (self.rho * self.total as f64).round() as usize
    }

    pub fn shifted_count(&self) -> usize {
        self.total - self.target_count()
    }
}

/// Draws `round(ρ·n)` videos from `target` and the remainder from
/// `shifted`, without replacement, labels hidden.
pub fn mix_domains(target: &[VideoSample], shifted: &[VideoSample], spec: DomainMixSpec, rng: &mut Rng) -> Result<Vec<VideoSample>> {
    if !(0.0..=1.0).contains(&spec.rho) {
        return Err(Error::config("rho", format!("{} is outside [0, 1]", spec.rho)));
    }
    let (nt, ns) = (spec.target_count(), spec.shifted_count());
    if nt > target.len() || ns > shifted.len() {
        return Err(Error::Data(format!(
            "domain mix needs {nt} target and {ns} shifted videos, pools have {} and {}",
            target.len(),
            shifted.len()
        )));
    }
    let mut out = Vec::with_capacity(spec.total);
    for (pool, n) in [(target, nt), (shifted, ns)] {
        let mut picked = index::sample(rng, pool.len(), n).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i].unlabeled()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use crate::rng::{stream, Stream};

    fn pool(domain: Domain, first: u64, n: usize) -> Vec<VideoSample> {
        (0..n)
            .map(|i| VideoSample::new(first + i as u64, i % 4, domain, 1.0, (1, 1, 1), vec![0.0]))
            .collect()
    }

    #[test]
    fn realized_proportions() {
        let t = pool(Domain::Target, 0, 100);
        let s = pool(Domain::Shifted, 1000, 100);
        let mut rng = stream(5, Stream::DomainMix);
        for (rho, want_t) in [(1.0, 100), (0.0, 0), (0.5, 50), (0.333, 33)] {
            let mix = mix_domains(&t, &s, DomainMixSpec { rho, total: 100 }, &mut rng).unwrap();
            assert_eq!(mix.len(), 100);
            assert_eq!(mix.iter().filter(|v| v.domain == Domain::Target).count(), want_t);
            assert!(mix.iter().all(|v| v.label.is_none()));
        }
    }

    #[test]
    fn insufficient_pool_is_an_error() {
        let t = pool(Domain::Target, 0, 10);
        let s = pool(Domain::Shifted, 100, 10);
        let mut rng = stream(5, Stream::DomainMix);
        assert!(mix_domains(&t, &s, DomainMixSpec { rho: 0.5, total: 40 }, &mut rng).is_err());
        assert!(mix_domains(&t, &s, DomainMixSpec { rho: 1.5, total: 4 }, &mut rng).is_err());
    }
}
