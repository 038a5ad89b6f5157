//! Latency harness contrasting zero-copy delivery with a copying baseline.
//!
//! Each measured sample spans `publish` through `take` on a single in-process
//! subscriber. Filling the payload is the producer's work and happens before
//! the clock starts on both paths.

use std::time::Instant;

use serde::Serialize;

use super::domain::{DeliveryMode, Domain, DomainConfig, Transport};
use super::qos::{type_hash, QosProfile, TopicDescriptor};
use super::{Payload, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BenchPath {
    ZeroCopy,
    Copying,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub path: BenchPath,
    pub size: usize,
    pub samples: usize,
    pub median_ns: u64,
    pub p99_ns: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Median latency of the largest size over the smallest, zero-copy path.
    pub zero_copy_ratio: f64,
    pub copying_ratio: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn measure(path: BenchPath, size: usize, samples: usize, slot_size: usize) -> Result<BenchRow> {
    let domain = Domain::new(DomainConfig {
        delivery: match path {
            BenchPath::ZeroCopy => DeliveryMode::ZeroCopy,
            BenchPath::Copying => DeliveryMode::Copying,
        },
        slot_size,
        ..DomainConfig::default()
    });
    let p = domain.create_participant("bench", Transport::InProcess)?;
    let topic = TopicDescriptor::new(
        "bench/payload",
        type_hash("bytes"),
        QosProfile::best_effort(),
    );
    let publisher = p.create_publisher(topic.clone())?;
    let subscriber = p.create_subscriber(topic)?;
    let source = Payload::from_vec(vec![0xA5; size]);
    let mut lat = Vec::with_capacity(samples);
    for i in 0..samples {
        let elapsed = match path {
            BenchPath::ZeroCopy => {
                let mut loan = publisher.loan(size)?;
                if let Some(b) = loan.first_mut() {
                    *b = i as u8;
                }
                let t0 = Instant::now();
                publisher.publish_loan(loan)?;
                let got = subscriber.take(1);
                let dt = t0.elapsed();
                debug_assert_eq!(got.len(), 1);
                dt
            }
            BenchPath::Copying => {
                let t0 = Instant::now();
                publisher.publish_shared(source.clone())?;
                let got = subscriber.take(1);
                let dt = t0.elapsed();
                debug_assert_eq!(got.len(), 1);
                dt
            }
        };
        lat.push(elapsed.as_nanos() as u64);
    }
    lat.sort_unstable();
    Ok(BenchRow {
        path,
        size,
        samples,
        median_ns: percentile(&lat, 0.5),
        p99_ns: percentile(&lat, 0.99),
    })
}

/// Runs both paths for every size. Sizes above `slot_size` fail with
/// `PayloadTooLarge`.
pub fn run_bench(sizes: &[usize], samples: usize, slot_size: usize) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for path in [BenchPath::ZeroCopy, BenchPath::Copying] {
        for &size in sizes {
            rows.push(measure(path, size, samples, slot_size)?);
        }
    }
    let ratio = |path: BenchPath| {
        let of = |pick: fn(&BenchRow, &BenchRow) -> bool| {
            rows.iter()
                .filter(|r| r.path == path)
                .reduce(|a, b| if pick(a, b) { a } else { b })
                .map_or(0, |r| r.median_ns.max(1))
        };
        of(|a, b| a.size >= b.size) as f64 / of(|a, b| a.size <= b.size) as f64
    };
    Ok(BenchReport {
        zero_copy_ratio: ratio(BenchPath::ZeroCopy),
        copying_ratio: ratio(BenchPath::Copying),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::middleware::MiddlewareError;

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 0.5), 50);
        assert_eq!(percentile(&v, 0.99), 99);
        assert_eq!(percentile(&[7], 0.99), 7);
    }

    #[test]
    fn empty_payload_is_accepted() {
        let r = run_bench(&[0], 3, 1024).unwrap();
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn oversize_is_rejected() {
        assert!(matches!(
            run_bench(&[2048], 1, 1024),
            Err(MiddlewareError::PayloadTooLarge { .. })
        ));
    }
}
