//! In-process data-parallel training.
//!
//! `K` workers run as threads, each with its own parameter registry and
//! solver. Gradients are combined with a blocking [`Communicator::all_reduce`]
//! that sums in ascending rank order, so every rank computes the same bits.

use std::any::Any;
use std::hash::{Hash, Hasher};
use std::ops::Range;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::graph::{set_default_context, ExecutionContext, Variable};
use crate::parameters::ParameterRegistry;
use crate::solver::{LossScaling, SgdSolver, StepOutcome};
use crate::tensor::NdArray;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

type Deposit = Box<dyn Any + Send + Sync>;

struct State {
    generation: u64,
    arrived: usize,
    slots: Vec<Option<Deposit>>,
    result: Option<Arc<Vec<Deposit>>>,
    aborted: bool,
}

struct Group {
    size: usize,
    timeout: Duration,
    state: Mutex<State>,
    cv: Condvar,
}

impl Group {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// One rank's handle on a worker group.
#[derive(Clone)]
pub struct Communicator {
    rank: usize,
    group: Arc<Group>,
}

/// Creates a group of `n_workers` communicators, one per rank.
pub fn init(n_workers: usize) -> Result<Vec<Communicator>> {
    init_with_timeout(n_workers, DEFAULT_TIMEOUT)
}

/// [`init`] with a bound on how long a collective waits for missing ranks.
pub fn init_with_timeout(n_workers: usize, timeout: Duration) -> Result<Vec<Communicator>> {
    if n_workers == 0 {
        return Err(Error::InvalidWorkerCount(n_workers));
    }
    let group = Arc::new(Group {
        size: n_workers,
        timeout,
        state: Mutex::new(State {
            generation: 0,
            arrived: 0,
            slots: (0..n_workers).map(|_| None).collect(),
            result: None,
            aborted: false,
        }),
        cv: Condvar::new(),
    });
    Ok((0..n_workers)
        .map(|rank| Communicator {
            rank,
            group: group.clone(),
        })
        .collect())
}

impl Communicator {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.group.size
    }

    /// Marks the group failed and wakes every waiting rank.
    pub fn abort(&self) {
        self.group.lock().aborted = true;
        self.group.cv.notify_all();
    }

    /// Collects one value from every rank, ordered by rank.
    pub fn all_gather<T: Clone + Send + Sync + 'static>(&self, value: T) -> Result<Vec<T>> {
        let g = &*self.group;
        let mut s = g.lock();
        if s.aborted {
            return Err(Error::CollectiveAborted);
        }
        let generation = s.generation;
        s.slots[self.rank] = Some(Box::new(value));
        s.arrived += 1;
        let result = if s.arrived == g.size {
            let gathered: Vec<Deposit> = s
                .slots
                .iter_mut()
                .map(|d| d.take().expect("every rank deposited"))
                .collect();
            let result = Arc::new(gathered);
            s.result = Some(result.clone());
            s.arrived = 0;
            s.generation += 1;
            g.cv.notify_all();
            result
        } else {
            let deadline = Instant::now() + g.timeout;
            loop {
                if s.generation != generation {
                    break s.result.clone().expect("completed collective has a result");
                }
                if s.aborted {
                    return Err(Error::CollectiveAborted);
                }
                let now = Instant::now();
                if now >= deadline {
                    s.aborted = true;
                    g.cv.notify_all();
                    return Err(Error::CollectiveTimeout(g.timeout));
                }
                s =
                    g.cv.wait_timeout(s, deadline - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
            }
        };
        drop(s);
        Ok(result
            .iter()
            .map(|d| d.downcast_ref::<T>().expect("all ranks gather the same type").clone())
            .collect())
    }

    pub fn barrier(&self) -> Result<()> {
        self.all_gather(()).map(|_| ())
    }

    /// Replaces each buffer with its elementwise sum over ranks, or the mean
    /// when `divide` is set. Buffers keep their dtype.
    pub fn all_reduce(&self, buffers: &mut [NdArray], divide: bool) -> Result<()> {
        if self.size() == 1 {
            return Ok(());
        }
        let all = self.all_gather(Arc::new(buffers.to_vec()))?;
        let reference = &all[0];
        for (rank, other) in all.iter().enumerate().skip(1) {
            let same = other.len() == reference.len()
                && other.iter().zip(reference.iter()).all(|(a, b)| a.shape() == b.shape());
            if !same {
                return Err(Error::ShapeMismatchAcrossRanks(format!(
                    "rank {rank} sent {:?}, rank 0 sent {:?}",
                    other.iter().map(|a| a.shape().to_vec()).collect::<Vec<_>>(),
                    reference.iter().map(|a| a.shape().to_vec()).collect::<Vec<_>>()
                )));
            }
        }
        let n = self.size() as f32;
        for (i, buf) in buffers.iter_mut().enumerate() {
            let mut acc = all[0][i].data().to_vec();
            for other in &all[1..] {
                for (a, &b) in acc.iter_mut().zip(other[i].data()) {
                    *a += b;
                }
            }
            if divide {
                acc.iter_mut().for_each(|a| *a /= n);
            }
            *buf = NdArray::from_vec_dtype(buf.shape(), acc, buf.dtype())?;
        }
        Ok(())
    }

    /// [`Communicator::all_reduce`] over the gradients of `params`.
    pub fn all_reduce_grads(&self, params: &IndexMap<String, Variable>, divide: bool) -> Result<()> {
        let mut grads: Vec<NdArray> = params.values().map(|p| (*p.grad()).clone()).collect();
        self.all_reduce(&mut grads, divide)?;
        for (p, g) in params.values().zip(grads) {
            p.set_grad(g)?;
        }
        Ok(())
    }
}

/// Hash of parameter names, dtypes, shapes and data bits.
pub fn parameter_hash(params: &IndexMap<String, Variable>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for (name, p) in params {
        name.hash(&mut h);
        p.dtype().as_str().hash(&mut h);
        p.shape().hash(&mut h);
        if let Some(d) = p.data() {
            for v in d.data() {
                v.to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Contiguous, disjoint shards covering `0..total`; earlier ranks take the remainder.
pub fn shard_range(total: usize, n_workers: usize, rank: usize) -> Range<usize> {
    let base = total / n_workers;
    let extra = total % n_workers;
    let start = rank * base + rank.min(extra);
    let len = base + usize::from(rank < extra);
    start..start + len
}

/// Per-rank shards of a batch plus the seed every replica starts from.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerPlan {
    pub seed: u64,
    pub shards: Vec<Range<usize>>,
}

impl WorkerPlan {
    pub fn new(batch: usize, n_workers: usize, seed: u64) -> Result<Self> {
        if n_workers == 0 {
            return Err(Error::InvalidWorkerCount(n_workers));
        }
        Ok(WorkerPlan {
            seed,
            shards: (0..n_workers).map(|r| shard_range(batch, n_workers, r)).collect(),
        })
    }
}

/// What a worker thread is handed: its communicator and its replica registry.
pub struct Worker {
    pub comm: Communicator,
    pub registry: ParameterRegistry,
}

impl Worker {
    pub fn rank(&self) -> usize {
        self.comm.rank()
    }
}

struct AbortOnPanic<'a>(&'a Communicator);

impl Drop for AbortOnPanic<'_> {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.0.abort();
        }
    }
}

/// Runs `f` on `n_workers` threads. Each thread gets `ctx` as its default
/// context and a fresh registry seeded with `seed`, so replicas initialize
/// identically. A failing rank aborts the group; the first non-abort error is returned.
pub fn run_workers<R, F>(n_workers: usize, seed: u64, ctx: ExecutionContext, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(Worker) -> Result<R> + Sync,
{
    run_workers_with_timeout(n_workers, seed, ctx, DEFAULT_TIMEOUT, f)
}

pub fn run_workers_with_timeout<R, F>(
    n_workers: usize,
    seed: u64,
    ctx: ExecutionContext,
    timeout: Duration,
    f: F,
) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(Worker) -> Result<R> + Sync,
{
    let comms = init_with_timeout(n_workers, timeout)?;
    let f = &f;
    let results: Vec<Result<R>> = std::thread::scope(|scope| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                scope.spawn(move || {
                    let _guard = AbortOnPanic(&comm);
                    set_default_context(ctx);
                    let registry = ParameterRegistry::new(seed);
                    registry.make_current();
                    let worker = Worker {
                        comm: comm.clone(),
                        registry,
                    };
                    let out = f(worker);
                    if out.is_err() {
                        comm.abort();
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(Error::CollectiveAborted)))
            .collect()
    });
    let mut first_abort = None;
    let mut ok = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(Error::CollectiveAborted) => {
                first_abort.get_or_insert(Error::CollectiveAborted);
            }
            Err(e) => return Err(e),
        }
    }
    match first_abort {
        Some(e) => Err(e),
        None => Ok(ok),
    }
}

/// One synchronized training step for this rank.
///
/// The caller has already placed this rank's shard in the graph inputs.
/// Runs forward, backward with buffer clearing, averages gradients across
/// ranks, steps the solver under `scaling`, and checks that every replica
/// ended with the same parameters.
pub fn data_parallel_step(
    comm: &Communicator,
    loss: &Variable,
    solver: &mut SgdSolver,
    scaling: &mut LossScaling,
) -> Result<StepOutcome> {
    loss.forward(false)?;
    loss.backward(scaling.seed(), true)?;
    let params = solver.parameters()?;
    comm.all_reduce_grads(&params, true)?;
    let outcome = scaling.step(solver)?;
    let hashes = comm.all_gather(parameter_hash(&params))?;
    if hashes.iter().any(|&h| h != hashes[0]) {
        return Err(Error::DivergedReplicas(hashes));
    }
    Ok(outcome)
}
