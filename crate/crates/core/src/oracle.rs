//! Query-counting access to black-box decision functions.
//!
//! Attacks never touch a detector or a tree directly; they hold an
//! [`OracleSession`] which numbers every query, optionally logs it, and is
//! the only source of the reported query count.

use crate::error::{Error, Result};
use crate::signal::Signal;

/// What the attacker was doing when a query was issued. Oracles may use it
/// for bookkeeping (e.g. experiment probes), never for answering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueryPhase {
    Unspecified,
    /// Bracketing and bisection along the initial ray.
    Locate,
    /// Finite-difference probes around a boundary point.
    Gradient,
    /// Re-mapping candidate directions during a descent step.
    Descent,
    /// Decision-tree extraction queries.
    Extraction,
    /// Innocuous queries interleaved by an adapted attacker.
    Cover,
    /// Honest traffic.
    Benign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryContext {
    /// Zero-based position of this query within the session.
    pub index: u64,
    pub phase: QueryPhase,
}

/// A black-box decision function.
pub trait Oracle {
    type Answer: Clone;

    fn answer(&mut self, query: &Signal, ctx: QueryContext) -> Result<Self::Answer>;
}

/// An oracle that can additionally reveal its real-valued score.
pub trait ScoredOracle: Oracle {
    fn score(&mut self, query: &Signal, ctx: QueryContext) -> Result<f64>;
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    type Answer = O::Answer;

    fn answer(&mut self, query: &Signal, ctx: QueryContext) -> Result<Self::Answer> {
        (**self).answer(query, ctx)
    }
}

impl<O: ScoredOracle + ?Sized> ScoredOracle for &mut O {
    fn score(&mut self, query: &Signal, ctx: QueryContext) -> Result<f64> {
        (**self).score(query, ctx)
    }
}

/// Whether the session exposes only decisions or also scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Binary,
    Numeric,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Response<A> {
    Answer(A),
    Score(f64),
    Refused,
}

#[derive(Clone, Debug)]
pub struct LogEntry<A> {
    pub query: Signal,
    pub phase: QueryPhase,
    pub response: Response<A>,
}

pub struct OracleSession<O: Oracle> {
    oracle: O,
    mode: Mode,
    query_count: u64,
    phase: QueryPhase,
    log: Option<Vec<LogEntry<O::Answer>>>,
}

impl<O: Oracle> OracleSession<O> {
    pub fn open(oracle: O, mode: Mode, logging: bool) -> Self {
        OracleSession {
            oracle,
            mode,
            query_count: 0,
            phase: QueryPhase::Unspecified,
            log: logging.then(Vec::new),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of oracle invocations so far, refused ones included.
    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    pub fn log(&self) -> Option<&[LogEntry<O::Answer>]> {
        self.log.as_deref()
    }

    pub fn phase(&self) -> QueryPhase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: QueryPhase) {
        self.phase = phase;
    }

    pub fn oracle(&self) -> &O {
        &self.oracle
    }

    pub fn oracle_mut(&mut self) -> &mut O {
        &mut self.oracle
    }

    pub fn into_oracle(self) -> O {
        self.oracle
    }

    fn next_context(&mut self) -> QueryContext {
        let ctx = QueryContext {
            index: self.query_count,
            phase: self.phase,
        };
        self.query_count += 1;
        ctx
    }

    fn record(&mut self, query: &Signal, response: Response<O::Answer>) {
        let phase = self.phase;
        if let Some(log) = &mut self.log {
            log.push(LogEntry {
                query: query.clone(),
                phase,
                response,
            });
        }
    }

    pub fn query(&mut self, q: &Signal) -> Result<O::Answer> {
        let ctx = self.next_context();
        let result = self.oracle.answer(q, ctx);
        let logged = match &result {
            Ok(a) => Response::Answer(a.clone()),
            Err(_) => Response::Refused,
        };
        self.record(q, logged);
        result
    }
}

impl<O: ScoredOracle> OracleSession<O> {
    /// The numeric score; refused without consuming a query in binary mode.
    pub fn query_score(&mut self, q: &Signal) -> Result<f64> {
        if self.mode == Mode::Binary {
            return Err(Error::ModeViolation);
        }
        let ctx = self.next_context();
        let result = self.oracle.score(q, ctx);
        let logged = match &result {
            Ok(s) => Response::Score(*s),
            Err(_) => Response::Refused,
        };
        self.record(q, logged);
        result
    }
}

/// Wraps a plain closure as an oracle.
pub struct FnOracle<F>(pub F);

impl<A: Clone, F: FnMut(&Signal) -> Result<A>> Oracle for FnOracle<F> {
    type Answer = A;

    fn answer(&mut self, query: &Signal, _ctx: QueryContext) -> Result<A> {
        (self.0)(query)
    }
}
