use std::sync::Arc;

use rayon::prelude::*;

use super::stats::RunStats;
use super::{make_shards, ClusterConfig};
use crate::codegen::{check_lengths, emit_full_program, n_passes, pass_program, CodegenOptions, ShardSpec};
use crate::engine::{categories, Breakdown, Core, CoreOptions, Event, GeluLut};
use crate::error::{Error, Result};
use crate::isa::Program;
use crate::memory::{DdrTag, WeightStore};
use crate::model::{Fp16, ModelWeights, TokenSeq};
use crate::network::ring_sync;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub codegen: CodegenOptions,
    /// Keep per-instruction timing records on every core.
    pub record: bool,
    /// Run cores on the rayon pool between barriers.
    pub parallel: bool,
}

pub struct RunOutput {
    pub tokens: TokenSeq,
    pub stats: RunStats,
    /// Residual stream after each layer, `[pos][layer]`, when tracing.
    pub activations: Vec<Vec<Vec<Fp16>>>,
    /// Final layernorm output and logits of the last pass.
    pub final_hidden: Vec<Fp16>,
    pub logits: Vec<Fp16>,
    /// KV rows per (layer, head) on completion.
    pub kv_rows: usize,
    /// Core 0, for inspection of its final state.
    pub core0: Core,
}

/// Every core's full program, for inspection.
pub fn emit_programs(
    cluster: &ClusterConfig,
    n_in: usize,
    n_out: usize,
    opts: &CodegenOptions,
) -> Result<Vec<Program>> {
    cluster.validate()?;
    make_shards(&cluster.model, cluster.n_cores)?
        .iter()
        .map(|s| emit_full_program(&cluster.model, s, n_in, n_out, opts))
        .collect()
}

struct Machine {
    cluster: ClusterConfig,
    shards: Vec<ShardSpec>,
    cores: Vec<Core>,
    opts: RunOptions,
    breakdown: Breakdown,
    snap: Vec<Breakdown>,
    syncs: u64,
}

fn run_one(core: &mut Core, prog: &Program, cats: &[crate::engine::Category], pc: &mut usize) -> Result<Event> {
    core.run(prog, cats, pc)
}

impl Machine {
    /// Adds the slowest core's cycles since the last barrier.
    fn close_segment(&mut self) {
        let crit = (0..self.cores.len()).max_by_key(|&i| (self.cores[i].now(), std::cmp::Reverse(i))).expect("cores");
        let now = self.cores[crit].stats().breakdown;
        for (k, c) in crate::engine::Category::ALL.into_iter().enumerate() {
            self.breakdown.add(c, now.0[k] - self.snap[crit].0[k]);
        }
        for (i, s) in self.snap.iter_mut().enumerate() {
            *s = self.cores[i].stats().breakdown;
        }
    }

    fn run_pass(&mut self, n_in: usize, n_out: usize, pos: usize) -> Result<()> {
        let cfg = self.cluster.model;
        let progs = self
            .shards
            .iter()
            .map(|s| pass_program(&cfg, s, n_in, n_out, pos, &self.opts.codegen))
            .collect::<Result<Vec<_>>>()?;
        let cats: Vec<_> = progs.iter().map(categories).collect();
        let mut pcs = vec![0usize; self.cores.len()];
        loop {
            let events: Vec<Result<Event>> = if self.opts.parallel {
                self.cores
                    .par_iter_mut()
                    .zip(pcs.par_iter_mut())
                    .enumerate()
                    .map(|(i, (c, pc))| run_one(c, &progs[i], &cats[i], pc))
                    .collect()
            } else {
                self.cores
                    .iter_mut()
                    .zip(pcs.iter_mut())
                    .enumerate()
                    .map(|(i, (c, pc))| run_one(c, &progs[i], &cats[i], pc))
                    .collect()
            };
            let events = events.into_iter().collect::<Result<Vec<_>>>()?;
            let done = events.iter().filter(|e| matches!(e, Event::Done)).count();
            if done == events.len() {
                return Ok(());
            }
            if done > 0 {
                let waiting: Vec<_> = (0..events.len()).filter(|&i| !matches!(events[i], Event::Done)).collect();
                return Err(Error::Deadlock(format!(
                    "pass {pos}: cores {waiting:?} wait at a barrier that {done} finished cores never reach"
                )));
            }
            self.barrier(events, pos)?;
        }
    }

    fn barrier(&mut self, events: Vec<Event>, pos: usize) -> Result<()> {
        let mut readies = Vec::with_capacity(events.len());
        let mut lens = Vec::with_capacity(events.len());
        let mut slices = Vec::with_capacity(events.len());
        for ev in events {
            let Event::Send { ready, n, data } = ev else { unreachable!("checked by caller") };
            readies.push(ready);
            lens.push(n);
            slices.push(data);
        }
        if lens.iter().any(|&n| n != lens[0]) {
            return Err(Error::SliceMismatch(format!("pass {pos}: slice lengths per core {lens:?}")));
        }
        let first = *readies.iter().min().expect("cores");
        let last = *readies.iter().max().expect("cores");
        if last - first > self.cluster.sync_timeout {
            let late = readies.iter().position(|&r| r == last).expect("max exists");
            return Err(Error::Deadlock(format!(
                "pass {pos}: core {late} reached the barrier {} cycles after the first (timeout {})",
                last - first,
                self.cluster.sync_timeout
            )));
        }
        let n = self.cores.len();
        let bits = self.cluster.geom.bw_data as u64;
        let cycles = self.cluster.link.all_gather_cycles(n, lens[0], bits);
        let gathered: Vec<Option<Vec<Fp16>>> = if slices.iter().all(Option::is_some) {
            let s: Vec<Vec<Fp16>> = slices.into_iter().map(Option::unwrap).collect();
            ring_sync(&s, &self.cluster.link, bits)?.0.into_iter().map(Some).collect()
        } else {
            vec![None; n]
        };
        let end = last + cycles;
        for (core, g) in self.cores.iter_mut().zip(gathered) {
            core.deliver(g, end)?;
        }
        self.syncs += 1;
        self.close_segment();
        Ok(())
    }

    fn stats(&self, n_in: usize, n_out: usize) -> RunStats {
        let cs = self.cores.iter().map(Core::stats);
        RunStats {
            config_hash: self.cluster.hash(),
            n_in,
            n_out,
            n_cores: self.cores.len(),
            total_cycles: self.breakdown.total(),
            breakdown: self.breakdown,
            clock_hz: self.cluster.clock_hz,
            syncs: self.syncs,
            stale_reads: cs.clone().map(|s| s.stale_reads).sum(),
            value_transpose_stalls: cs.clone().map(|s| s.value_transpose_stalls).sum(),
            nonfinite_results: cs.clone().map(|s| s.nonfinite_results).sum(),
            core_cycles: self.cores.iter().map(Core::now).collect(),
        }
    }
}

fn machine(cluster: &ClusterConfig, opts: RunOptions, build: impl Fn(ShardSpec) -> Result<Core>) -> Result<Machine> {
    cluster.validate()?;
    let shards = make_shards(&cluster.model, cluster.n_cores)?;
    let cores = shards.iter().cloned().map(build).collect::<Result<Vec<_>>>()?;
    Ok(Machine {
        cluster: *cluster,
        snap: vec![Breakdown::default(); shards.len()],
        shards,
        cores,
        opts,
        breakdown: Breakdown::default(),
        syncs: 0,
    })
}

fn core_options(cluster: &ClusterConfig, opts: &RunOptions) -> CoreOptions {
    CoreOptions { geom: cluster.geom, lat: cluster.lat, record: opts.record }
}

/// Cycle accounting only; no data is computed.
pub fn run_timing(cluster: &ClusterConfig, n_in: usize, n_out: usize, opts: RunOptions) -> Result<RunStats> {
    check_lengths(&cluster.model, n_in, n_out)?;
    let copts = core_options(cluster, &opts);
    let mut m = machine(cluster, opts, |s| Ok(Core::timing(cluster.model, s, n_in, copts)))?;
    for pos in 0..n_passes(n_in, n_out) {
        m.run_pass(n_in, n_out, pos)?;
    }
    m.close_segment();
    Ok(m.stats(n_in, n_out))
}

/// Greedy generation of `n_out` tokens after `input`, with full data and
/// cycle accounting.
pub fn run_generation(
    cluster: &ClusterConfig,
    weights: &ModelWeights,
    input: &TokenSeq,
    n_out: usize,
    opts: RunOptions,
) -> Result<RunOutput> {
    let cfg = cluster.model;
    if weights.cfg != cfg {
        return Err(Error::Config("weights were generated for a different model configuration".into()));
    }
    let n_in = input.len();
    check_lengths(&cfg, n_in, n_out)?;
    TokenSeq::new(input.ids().to_vec(), cfg.vocab)?;
    let copts = core_options(cluster, &opts);
    let lut = Arc::new(GeluLut::new());
    let mut m = machine(cluster, opts, |s| {
        let ws = Arc::new(WeightStore::load(weights, &s, cluster.geom));
        Core::functional(weights, s, input, copts, ws, lut.clone())
    })?;
    let mut out = Vec::with_capacity(n_out);
    for pos in 0..n_passes(n_in, n_out) {
        m.run_pass(n_in, n_out, pos)?;
        if pos + 1 >= n_in {
            let slot = pos + 1;
            let toks =
                m.cores.iter().map(|c| c.ddr().expect("functional").read_token(slot)).collect::<Result<Vec<_>>>()?;
            if toks.iter().any(|&t| t != toks[0]) {
                return Err(Error::Deadlock(format!("cores disagree on the token at slot {slot}: {toks:?}")));
            }
            out.push(toks[0]);
        }
    }
    m.close_segment();
    let stats = m.stats(n_in, n_out);
    let core0 = m.cores.swap_remove(0);
    let activations = if opts.codegen.trace {
        let ddr = core0.ddr().expect("functional");
        (0..n_passes(n_in, n_out))
            .map(|pos| {
                (0..cfg.n_layer)
                    .map(|layer| ddr.scratch(&DdrTag::Act { pos, layer }).map(<[Fp16]>::to_vec).unwrap_or_default())
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RunOutput {
        tokens: TokenSeq::new(out, cfg.vocab)?,
        stats,
        activations,
        final_hidden: core0.vreg(1).map(<[Fp16]>::to_vec).unwrap_or_default(),
        logits: core0.vreg(19).map(<[Fp16]>::to_vec).unwrap_or_default(),
        kv_rows: core0.kv().map_or(0, |kv| kv.len(0, 0)),
        core0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GPTConfig;

    fn tiny_weights() -> ModelWeights {
        ModelWeights::random(GPTConfig::TINY, 7, 0.02).unwrap()
    }

    #[test]
    fn four_in_three_out() {
        let w = tiny_weights();
        let input = TokenSeq::new(vec![5, 17, 300, 2], 512).unwrap();
        let out =
            run_generation(&ClusterConfig::new(GPTConfig::TINY, 1), &w, &input, 3, RunOptions::default()).unwrap();
        assert_eq!(out.tokens.len(), 3);
        assert_eq!(out.kv_rows, 6);
        assert_eq!(out.stats.stale_reads, 0);
        assert_eq!(out.stats.breakdown.total(), out.stats.total_cycles);
        assert_eq!(out.stats.total_cycles, out.stats.core_cycles[0]);
    }

    #[test]
    fn timing_matches_functional_cycles() {
        let w = tiny_weights();
        let input = TokenSeq::new(vec![1, 2], 512).unwrap();
        for n in [1, 2] {
            let c = ClusterConfig::new(GPTConfig::TINY, n);
            let f = run_generation(&c, &w, &input, 2, RunOptions::default()).unwrap();
            let t = run_timing(&c, 2, 2, RunOptions::default()).unwrap();
            assert_eq!(f.stats, t);
        }
    }

    #[test]
    fn barrier_accounting_is_conserved() {
        let c = ClusterConfig::new(GPTConfig::TINY4, 4);
        let s = run_timing(&c, 3, 2, RunOptions::default()).unwrap();
        assert_eq!(s.breakdown.total(), s.total_cycles);
        assert_eq!(s.total_cycles, *s.core_cycles.iter().max().unwrap());
        assert_eq!(s.syncs, 4 * 2 * 4);
        assert!(s.breakdown.get(crate::engine::Category::Sync) > 0);
    }

    #[test]
    fn mismatched_weights_are_rejected() {
        let w = tiny_weights();
        let input = TokenSeq::new(vec![1], 512).unwrap();
        let c = ClusterConfig::new(GPTConfig::TINY4, 1);
        assert!(run_generation(&c, &w, &input, 1, RunOptions::default()).is_err());
    }
}
