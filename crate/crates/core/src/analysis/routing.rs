use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{AfmNet, Head};
use crate::nn::ParamStore;
use crate::tensor::Real;
use crate::train::predict;

/// Mean gate probabilities per class; classes without samples are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingTable {
    pub classes: Vec<String>,
    pub samples: Vec<usize>,
    /// One row of length `experts` per listed class.
    pub rows: Vec<Vec<f64>>,
    pub experts: usize,
}

impl RoutingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,samples");
        for e in 0..self.experts {
            out.push_str(&format!(",expert{e}"));
        }
        out.push('\n');
        for ((name, n), row) in self.classes.iter().zip(&self.samples).zip(&self.rows) {
            out.push_str(&format!("{name},{n}"));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn routing_stats<T: Real>(
    net: &AfmNet,
    store: &ParamStore<T>,
    data: &Dataset,
    batch_size: usize,
) -> Result<RoutingTable> {
    let Head::Moe(head) = &net.head else {
        return Err(Error::Capability(
            "routing statistics need the mixture-of-experts head".into(),
        ));
    };
    let experts = head.experts.len();
    let indices: Vec<usize> = (0..data.len()).collect();
    let (_, reports) = predict(net, store, data, &indices, batch_size)?;
    let c = data.num_classes();
    let mut sums = vec![vec![0.0; experts]; c];
    let mut counts = vec![0usize; c];
    let scores = reports.iter().flat_map(|r| r.scores.iter());
    for (sample, row) in data.samples.iter().zip(scores) {
        counts[sample.label] += 1;
        sums[sample.label].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    let mut table = RoutingTable {
        classes: Vec::new(),
        samples: Vec::new(),
        rows: Vec::new(),
        experts,
    };
    for (class, (sum, n)) in sums.into_iter().zip(counts).enumerate() {
        if n > 0 {
            table.classes.push(data.classes[class].clone());
            table.samples.push(n);
            table.rows.push(sum.into_iter().map(|s| s / n as f64).collect());
        }
    }
    Ok(table)
}
