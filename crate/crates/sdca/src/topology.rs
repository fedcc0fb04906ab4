//! Machine characteristics (cache line size, last-level-cache size, group
//! layout) with portable fallbacks, and thread placement across groups.
//!
//! A group abstracts a NUMA node: a set of cores with a locality affinity.
//! Probing reads whatever the host OS exposes (sysfs on Linux) and degrades
//! to safe defaults everywhere else; overrides make every topology-dependent
//! code path reproducible on any machine.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const FALLBACK_CACHE_LINE: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub id: usize,
    pub cores: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemTopology {
    pub cache_line_bytes: usize,
    pub llc_bytes: Option<usize>,
    pub groups: Vec<Group>,
    /// Group where the dataset resides, when known (config-supplied).
    pub data_group: Option<usize>,
}

impl SystemTopology {
    pub fn total_cores(&self) -> usize {
        self.groups.iter().map(|g| g.cores).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct TopologyOverrides {
    pub cache_line: Option<usize>,
    pub llc_bytes: Option<usize>,
    /// Cores per group, e.g. `[8, 8, 8, 8]`.
    pub groups: Option<Vec<usize>>,
    pub data_group: Option<usize>,
}

/// Probe the host, apply overrides, fall back to defaults. Never fails.
pub fn probe(overrides: &TopologyOverrides) -> SystemTopology {
    let cache_line_bytes = overrides
        .cache_line
        .or_else(probe_cache_line)
        .filter(|c| [32, 64, 128, 256].contains(c))
        .unwrap_or(FALLBACK_CACHE_LINE);

    let llc_bytes = overrides.llc_bytes.or_else(probe_llc);

    let groups = match &overrides.groups {
        Some(cores) if !cores.is_empty() => cores
            .iter()
            .enumerate()
            .map(|(id, &c)| Group { id, cores: c.max(1) })
            .collect(),
        _ => probe_groups().unwrap_or_else(|| {
            let cores = std::thread::available_parallelism().map_or(1, |p| p.get());
            vec![Group { id: 0, cores }]
        }),
    };

    SystemTopology {
        cache_line_bytes,
        llc_bytes,
        groups,
        data_group: overrides.data_group,
    }
}

fn read_trimmed(path: &Path) -> Option<String> {
    fs::read_to_string(path).ok().map(|s| s.trim().to_string())
}

fn probe_cache_line() -> Option<usize> {
    read_trimmed(Path::new(
        "/sys/devices/system/cpu/cpu0/cache/index0/coherency_line_size",
    ))?
    .parse()
    .ok()
}

/// Size strings look like "32K", "8192K", or "12M".
fn parse_cache_size(s: &str) -> Option<usize> {
    let s = s.trim();
    let (num, mult) = match s.as_bytes().last()? {
        b'K' | b'k' => (&s[..s.len() - 1], 1024),
        b'M' | b'm' => (&s[..s.len() - 1], 1024 * 1024),
        b'G' | b'g' => (&s[..s.len() - 1], 1024 * 1024 * 1024),
        _ => (s, 1),
    };
    num.parse::<usize>().ok().map(|v| v * mult)
}

fn probe_llc() -> Option<usize> {
    let base = Path::new("/sys/devices/system/cpu/cpu0/cache");
    let mut best: Option<(usize, usize)> = None; // (level, size)
    for idx in 0..8 {
        let dir = base.join(format!("index{idx}"));
        if !dir.exists() {
            break;
        }
        let cache_type = read_trimmed(&dir.join("type")).unwrap_or_default();
        if cache_type == "Instruction" {
            continue;
        }
        let level: usize = match read_trimmed(&dir.join("level")).and_then(|s| s.parse().ok()) {
            Some(l) => l,
            None => continue,
        };
        let size = match read_trimmed(&dir.join("size")).and_then(|s| parse_cache_size(&s)) {
            Some(s) => s,
            None => continue,
        };
        if best.is_none_or(|(l, _)| level > l) {
            best = Some((level, size));
        }
    }
    best.map(|(_, size)| size)
}

/// Count of cpus in a cpulist like "0-7,16-23".
fn count_cpulist(s: &str) -> usize {
    s.split(',')
        .filter(|part| !part.is_empty())
        .map(|part| match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().unwrap_or(0);
                let hi: usize = hi.trim().parse().unwrap_or(lo);
                hi.saturating_sub(lo) + 1
            }
            None => 1,
        })
        .sum()
}

fn probe_groups() -> Option<Vec<Group>> {
    let base = Path::new("/sys/devices/system/node");
    let mut groups = Vec::new();
    let entries = fs::read_dir(base).ok()?;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(id_str) = name.strip_prefix("node") {
            if let Ok(id) = id_str.parse::<usize>() {
                let cpulist = read_trimmed(&entry.path().join("cpulist"))?;
                let cores = count_cpulist(&cpulist);
                if cores > 0 {
                    groups.push(Group { id, cores });
                }
            }
        }
    }
    if groups.is_empty() {
        return None;
    }
    groups.sort_by_key(|g| g.id);
    // renumber so group ids are dense
    for (i, g) in groups.iter_mut().enumerate() {
        g.id = i;
    }
    Some(groups)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreadPlan {
    /// (group id, thread count) pairs, sorted by group id.
    pub assignments: Vec<(usize, usize)>,
    pub total_threads: usize,
}

/// Place `requested` threads on the minimum number of groups that can hold
/// them. A single group is used whenever one fits the request, preferring
/// the data-resident group; multi-group plans always include the
/// data-resident group and spread threads as evenly as capacity allows.
pub fn plan_threads(
    requested: usize,
    topo: &SystemTopology,
    oversubscribe: bool,
) -> Result<ThreadPlan> {
    if requested == 0 {
        return Err(Error::InvalidConfig("thread count must be >= 1".into()));
    }
    if topo.groups.is_empty() {
        return Err(Error::InvalidConfig("topology has no groups".into()));
    }
    let total_cores = topo.total_cores();
    if requested > total_cores && !oversubscribe {
        return Err(Error::InvalidConfig(format!(
            "requested {requested} threads but the machine has {total_cores} cores \
             (enable oversubscription to allow this)"
        )));
    }

    // Single-group case.
    let single = topo
        .data_group
        .and_then(|dg| topo.groups.iter().find(|g| g.id == dg))
        .filter(|g| g.cores >= requested)
        .or_else(|| topo.groups.iter().find(|g| g.cores >= requested));
    if let Some(g) = single {
        return Ok(ThreadPlan {
            assignments: vec![(g.id, requested)],
            total_threads: requested,
        });
    }
    if requested > total_cores {
        // oversubscribed: spread over all groups
        return Ok(distribute(requested, &topo.groups, true));
    }

    // Minimum number of groups: data group first, then largest capacity.
    let mut candidates: Vec<&Group> = topo.groups.iter().collect();
    candidates.sort_by_key(|g| {
        let is_data = topo.data_group == Some(g.id);
        (!is_data, std::cmp::Reverse(g.cores), g.id)
    });
    let mut selected: Vec<Group> = Vec::new();
    let mut capacity = 0;
    for g in candidates {
        selected.push(g.clone());
        capacity += g.cores;
        if capacity >= requested {
            break;
        }
    }
    Ok(distribute(requested, &selected, false))
}

fn distribute(requested: usize, groups: &[Group], oversubscribe: bool) -> ThreadPlan {
    let k = groups.len();
    let mut counts: Vec<usize> = (0..k)
        .map(|i| requested / k + usize::from(i < requested % k))
        .collect();
    if !oversubscribe {
        // Move any overflow beyond a group's cores to groups with spare
        // capacity; total selected capacity >= requested guarantees this
        // terminates.
        loop {
            let mut moved = false;
            for i in 0..k {
                while counts[i] > groups[i].cores {
                    if let Some(j) = (0..k).find(|&j| counts[j] < groups[j].cores) {
                        counts[i] -= 1;
                        counts[j] += 1;
                        moved = true;
                    } else {
                        break;
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }
    let mut assignments: Vec<(usize, usize)> = groups
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(g, &c)| (g.id, c))
        .collect();
    assignments.sort_by_key(|&(id, _)| id);
    ThreadPlan {
        assignments,
        total_threads: requested,
    }
}
