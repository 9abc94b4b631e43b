//! Trajectory probe export.

use std::io::{self, Write};

/// One row of the trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub replicate: u64,
    pub seed: u64,
    pub time: f64,
    /// Coordinates, used for ordering.
    pub site: Vec<i64>,
    pub value: i64,
    pub observable: String,
}

/// Writes rows ordered by replicate, then time, then lexicographic site.
pub fn write_trajectory_csv<W: Write>(rows: &mut [TrajectoryRow], mut out: W) -> io::Result<()> {
    rows.sort_by(|a, b| {
        a.replicate
            .cmp(&b.replicate)
            .then(a.time.total_cmp(&b.time))
            .then_with(|| a.site.cmp(&b.site))
            .then_with(|| a.observable.cmp(&b.observable))
    });
    writeln!(out, "replicate,seed,time,site,value,observable")?;
    for r in rows.iter() {
        let site = r.site.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.replicate, r.seed, r.time, site, r.value, r.observable
        )?;
    }
    Ok(())
}
