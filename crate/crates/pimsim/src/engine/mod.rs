//! Deterministic cycle-accurate execution of a program: per-core fetch into a
//! reorder buffer, hazard-checked dispatch to four execution-unit classes,
//! rendezvous transfers over the mesh, and event-driven global time.
//!
//! The engine advances time to the next completion event, but all timestamps
//! are integer cycles and dispatch is replayed to a fixpoint at each event
//! time, so results are identical to naive per-cycle stepping. Everything is
//! a pure function of (program, config, initial global memory).

use crate::config::ArchConfig;
use crate::isa::{
    validate_program, CoreId, ElemWidth, GroupEntry, Instruction, InstrClass, Program,
    ProgramViolation,
};
use crate::nn::{requantize, sat_add_i8, QuantParams};
use crate::noc::{Link, Noc, TransferKind};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use thiserror::Error;

pub const DEFAULT_WATCHDOG_CYCLES: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Ceiling on simulated time; exceeding it (or going quiescent with
    /// unhalted cores) reports a watchdog deadlock with a state dump.
    pub watchdog_cycles: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            watchdog_cycles: DEFAULT_WATCHDOG_CYCLES,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("program failed validation:\n{}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ProgramViolation>),
    #[error("watchdog deadlock at cycle {cycle}")]
    Deadlock { cycle: u64, dump: String },
    #[error("core {core} inst {index}: address fault: {msg}")]
    AddressFault {
        core: CoreId,
        index: usize,
        msg: String,
    },
}

/// One record per executed instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub core: CoreId,
    pub index: usize,
    pub mnemonic: &'static str,
    pub class: InstrClass,
    pub layer: Option<u32>,
    pub issue: u64,
    pub complete: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkTraceRecord {
    pub from: usize,
    pub to: usize,
    pub start: u64,
    pub end: u64,
    pub bytes: u64,
}

/// Raw event tallies; energy = counts x per-event costs (see `metrics`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnergyCounts {
    pub mvm_xbar_activations: u64,
    pub adc_samples: u64,
    pub vector_elems: u64,
    pub noc_byte_hops: u64,
    pub mem_bytes: u64,
    pub scalar_insts: u64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub total_cycles: u64,
    /// Busy cycles per program core, indexed by instruction class.
    pub unit_busy: BTreeMap<CoreId, [u64; 4]>,
    pub inst_counts: [u64; 4],
    pub counts: EnergyCounts,
    pub gmem: Vec<u8>,
    /// Per-instruction timing, sorted by (core, instruction index).
    pub trace: Vec<TraceRecord>,
    pub link_trace: Vec<LinkTraceRecord>,
}

impl InstrClass {
    pub fn index(self) -> usize {
        match self {
            InstrClass::Matrix => 0,
            InstrClass::Vector => 1,
            InstrClass::Transfer => 2,
            InstrClass::Scalar => 3,
        }
    }

    pub fn all() -> [InstrClass; 4] {
        [
            InstrClass::Matrix,
            InstrClass::Vector,
            InstrClass::Transfer,
            InstrClass::Scalar,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Waiting,
    Executing,
    Done,
}

#[derive(Debug, Clone, Default)]
struct AccessSets {
    mem_reads: Vec<(u64, u64)>,
    mem_writes: Vec<(u64, u64)>,
    reg_reads: u64,
    reg_writes: u64,
}

impl AccessSets {
    fn conflicts_with_older(&self, older: &AccessSets) -> bool {
        overlap(&self.mem_reads, &older.mem_writes) // RAW
            || overlap(&self.mem_writes, &older.mem_writes) // WAW
            || overlap(&self.mem_writes, &older.mem_reads) // WAR
            || self.reg_reads & older.reg_writes != 0
            || self.reg_writes & older.reg_writes != 0
            || self.reg_writes & older.reg_reads != 0
    }
}

fn overlap(a: &[(u64, u64)], b: &[(u64, u64)]) -> bool {
    a.iter()
        .any(|&(s1, e1)| b.iter().any(|&(s2, e2)| s1 < e2 && s2 < e1))
}

#[derive(Debug, Clone)]
struct RobEntry {
    id: u64,
    index: usize,
    status: Status,
    sets: AccessSets,
    class: InstrClass,
    group: Option<u32>,
    issue: u64,
    complete: u64,
}

#[derive(Debug)]
struct Core {
    id: CoreId,
    node: usize,
    pc: usize,
    regs: Vec<i64>,
    mem: Vec<u8>,
    rob: VecDeque<RobEntry>,
    fetch_stalled: bool,
    halted: bool,
    halt_time: u64,
    vector_busy_until: u64,
    scalar_busy_until: u64,
    transfer_in_flight: bool,
    group_busy_until: BTreeMap<u32, u64>,
    dispatch_cycle: u64,
    dispatched_this_cycle: usize,
    busy_acc: [u64; 4],
    matrix_intervals: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Local {
        core: usize, // index into cores vec
        entry: u64,
    },
    Transfer {
        id: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap via Reverse: order by (time, seq)
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct TransferHalf {
    core_idx: usize,
    entry: u64,
    addr: u64,
    len: u64,
    dispatched: u64,
}

#[derive(Debug, Clone, Default)]
struct Rendezvous {
    send: Option<TransferHalf>,
    recv: Option<TransferHalf>,
}

#[derive(Debug, Clone)]
struct ReadyTransfer {
    sender_core: CoreId,
    kind: TransferKind,
    src_node: usize,
    dst_node: usize,
    bytes: u64,
    send: Option<TransferHalf>,
    recv: Option<TransferHalf>,
    gaddr: u64,
}

#[derive(Debug, Clone)]
struct InFlightTransfer {
    ready: ReadyTransfer,
    completion: u64,
}

struct Engine<'a> {
    program: &'a Program,
    cfg: &'a ArchConfig,
    opts: &'a SimOptions,
    cores: Vec<Core>,
    core_index: BTreeMap<CoreId, usize>,
    noc: Noc,
    gmem: Vec<u8>,
    now: u64,
    events: BinaryHeap<std::cmp::Reverse<Event>>,
    event_seq: u64,
    entry_seq: u64,
    transfer_seq: u64,
    rendezvous: BTreeMap<(CoreId, CoreId, u32), Rendezvous>,
    ready_transfers: Vec<ReadyTransfer>,
    in_flight: BTreeMap<u64, InFlightTransfer>,
    counts: EnergyCounts,
    inst_counts: [u64; 4],
    trace: Vec<TraceRecord>,
    link_trace: Vec<LinkTraceRecord>,
}

/// Execute `program` until every core commits HALT.
///
/// `gmem_init` seeds global memory from address 0; addresses beyond it read
/// as zero and grow on demand.
pub fn simulate(
    program: &Program,
    cfg: &ArchConfig,
    gmem_init: &[u8],
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    let violations = validate_program(program, cfg);
    if !violations.is_empty() {
        return Err(SimError::Invalid(violations));
    }

    let mut cores = Vec::new();
    let mut core_index = BTreeMap::new();
    for (&id, _) in &program.cores {
        let (x, y) = cfg.core_coord(id);
        core_index.insert(id, cores.len());
        cores.push(Core {
            id,
            node: cfg.coord_core(x, y),
            pc: 0,
            regs: vec![0; cfg.core.num_scalar_regs],
            mem: vec![0; cfg.core.local_mem_bytes],
            rob: VecDeque::new(),
            fetch_stalled: false,
            halted: false,
            halt_time: 0,
            vector_busy_until: 0,
            scalar_busy_until: 0,
            transfer_in_flight: false,
            group_busy_until: BTreeMap::new(),
            dispatch_cycle: 0,
            dispatched_this_cycle: 0,
            busy_acc: [0; 4],
            matrix_intervals: Vec::new(),
        });
    }

    let mut engine = Engine {
        program,
        cfg,
        opts,
        cores,
        core_index,
        noc: Noc::new(cfg),
        gmem: gmem_init.to_vec(),
        now: 0,
        events: BinaryHeap::new(),
        event_seq: 0,
        entry_seq: 0,
        transfer_seq: 0,
        rendezvous: BTreeMap::new(),
        ready_transfers: Vec::new(),
        in_flight: BTreeMap::new(),
        counts: EnergyCounts::default(),
        inst_counts: [0; 4],
        trace: Vec::new(),
        link_trace: Vec::new(),
    };
    engine.run()
}

impl<'a> Engine<'a> {
    fn run(&mut self) -> Result<SimResult, SimError> {
        loop {
            // replay fetch/dispatch/commit at the current cycle to a fixpoint
            loop {
                let mut progress = false;
                for idx in 0..self.cores.len() {
                    progress |= self.step_core(idx)?;
                }
                if !progress {
                    break;
                }
            }
            self.launch_ready_transfers();

            if self.cores.iter().all(|c| c.halted) {
                break;
            }

            match self.events.pop() {
                None => {
                    let dump = self.dump_state();
                    return Err(SimError::Deadlock {
                        cycle: self.now,
                        dump,
                    });
                }
                Some(std::cmp::Reverse(ev)) => {
                    self.now = ev.time;
                    if self.now > self.opts.watchdog_cycles {
                        let dump = self.dump_state();
                        return Err(SimError::Deadlock {
                            cycle: self.now,
                            dump,
                        });
                    }
                    self.apply_event(ev);
                    while let Some(&std::cmp::Reverse(next)) = self.events.peek() {
                        if next.time != self.now {
                            break;
                        }
                        self.events.pop();
                        self.apply_event(next);
                    }
                }
            }
        }

        let total_cycles = self.cores.iter().map(|c| c.halt_time).max().unwrap_or(0);
        let mut unit_busy = BTreeMap::new();
        for core in &mut self.cores {
            core.busy_acc[InstrClass::Matrix.index()] = merged_len(&mut core.matrix_intervals);
            unit_busy.insert(core.id, core.busy_acc);
        }
        let mut trace = std::mem::take(&mut self.trace);
        trace.sort_by_key(|r| (r.core, r.index));
        Ok(SimResult {
            total_cycles,
            unit_busy,
            inst_counts: self.inst_counts,
            counts: self.counts,
            gmem: std::mem::take(&mut self.gmem),
            trace,
            link_trace: std::mem::take(&mut self.link_trace),
        })
    }

    fn push_event(&mut self, time: u64, kind: EventKind) {
        self.events.push(std::cmp::Reverse(Event {
            time,
            seq: self.event_seq,
            kind,
        }));
        self.event_seq += 1;
    }

    fn step_core(&mut self, idx: usize) -> Result<bool, SimError> {
        if self.cores[idx].halted {
            return Ok(false);
        }
        let mut progress = false;
        progress |= self.commit(idx);
        progress |= self.fetch(idx);
        progress |= self.dispatch(idx)?;
        Ok(progress)
    }

    fn commit(&mut self, idx: usize) -> bool {
        let mut progress = false;
        loop {
            let core = &mut self.cores[idx];
            match core.rob.front() {
                Some(e) if e.status == Status::Done => {
                    let entry = core.rob.pop_front().unwrap();
                    self.inst_counts[entry.class.index()] += 1;
                    let inst = &self.program.cores[&core.id].instructions[entry.index];
                    if matches!(inst, Instruction::Halt) {
                        core.halted = true;
                        core.halt_time = self.now;
                    }
                    progress = true;
                    if core.halted {
                        break;
                    }
                }
                _ => break,
            }
        }
        progress
    }

    fn fetch(&mut self, idx: usize) -> bool {
        let core = &mut self.cores[idx];
        let cp = &self.program.cores[&core.id];
        let mut progress = false;
        while !core.fetch_stalled
            && core.rob.len() < self.cfg.core.rob_size
            && core.pc < cp.instructions.len()
        {
            let index = core.pc;
            let inst = &cp.instructions[index];
            let sets = access_sets(inst, group_of(cp, inst));
            core.rob.push_back(RobEntry {
                id: self.entry_seq,
                index,
                status: Status::Waiting,
                sets,
                class: inst.class(),
                group: match inst {
                    Instruction::Mvm { group, .. } => Some(*group),
                    _ => None,
                },
                issue: 0,
                complete: 0,
            });
            self.entry_seq += 1;
            core.pc += 1;
            // control flow and HALT gate the front end until resolved
            if matches!(
                inst,
                Instruction::Bne { .. } | Instruction::Jmp { .. } | Instruction::Halt
            ) {
                core.fetch_stalled = true;
            }
            progress = true;
        }
        progress
    }

    fn dispatch(&mut self, idx: usize) -> Result<bool, SimError> {
        if self.cores[idx].dispatch_cycle != self.now {
            self.cores[idx].dispatch_cycle = self.now;
            self.cores[idx].dispatched_this_cycle = 0;
        }
        let mut progress = false;
        let rob_len = self.cores[idx].rob.len();
        for pos in 0..rob_len {
            if self.cores[idx].dispatched_this_cycle >= self.cfg.core.dispatch_width {
                break;
            }
            let core = &self.cores[idx];
            let entry = &core.rob[pos];
            if entry.status != Status::Waiting {
                continue;
            }
            // data hazards against all older, not-yet-done entries
            let hazard = core.rob.iter().take(pos).any(|older| {
                older.status != Status::Done && entry.sets.conflicts_with_older(&older.sets)
            });
            if hazard {
                continue;
            }
            // structural availability per class
            let free = match entry.class {
                InstrClass::Vector => core.vector_busy_until <= self.now,
                InstrClass::Scalar => core.scalar_busy_until <= self.now,
                InstrClass::Matrix => {
                    let g = entry.group.expect("matrix entry has a group");
                    core.group_busy_until.get(&g).copied().unwrap_or(0) <= self.now
                }
                // transfers keep program order: the unit is free and no older
                // transfer is still pending (rendezvous never reorders)
                InstrClass::Transfer => {
                    !core.transfer_in_flight
                        && !core
                            .rob
                            .iter()
                            .take(pos)
                            .any(|e| e.class == InstrClass::Transfer && e.status != Status::Done)
                }
            };
            if !free {
                continue;
            }
            self.issue(idx, pos)?;
            self.cores[idx].dispatched_this_cycle += 1;
            progress = true;
        }
        Ok(progress)
    }

    fn issue(&mut self, idx: usize, pos: usize) -> Result<(), SimError> {
        let core_id = self.cores[idx].id;
        let entry_id = self.cores[idx].rob[pos].id;
        let index = self.cores[idx].rob[pos].index;
        let inst = self.program.cores[&core_id].instructions[index].clone();
        let now = self.now;

        {
            let e = &mut self.cores[idx].rob[pos];
            e.status = Status::Executing;
            e.issue = now;
        }

        let t = &self.cfg.timing;
        match &inst {
            Instruction::Mvm { group, src, dst } => {
                let g = self.program.cores[&core_id].group(*group).unwrap().clone();
                let latency = self.exec_mvm(idx, &g, *src, *dst, index)?;
                let done = now + latency;
                let core = &mut self.cores[idx];
                core.group_busy_until.insert(*group, done);
                core.matrix_intervals.push((now, done));
                self.finish_local(idx, entry_id, done);
            }
            Instruction::Vadd { .. }
            | Instruction::Vmax { .. }
            | Instruction::Vrelu { .. }
            | Instruction::Vcopy { .. }
            | Instruction::Vscale { .. } => {
                let len = self.exec_vector(idx, &inst, index)?;
                let latency = t.vec_setup_cycles + (len as u64).div_ceil(t.vec_elems_per_cycle);
                let done = now + latency;
                let core = &mut self.cores[idx];
                core.vector_busy_until = done;
                core.busy_acc[InstrClass::Vector.index()] += latency;
                self.finish_local(idx, entry_id, done);
            }
            Instruction::Li { .. }
            | Instruction::Sadd { .. }
            | Instruction::Ssub { .. }
            | Instruction::Smul { .. }
            | Instruction::Bne { .. }
            | Instruction::Jmp { .. }
            | Instruction::Nop
            | Instruction::Halt => {
                self.exec_scalar(idx, &inst);
                let done = now + t.scalar_cycles;
                let core = &mut self.cores[idx];
                core.scalar_busy_until = done;
                core.busy_acc[InstrClass::Scalar.index()] += t.scalar_cycles;
                self.counts.scalar_insts += 1;
                self.finish_local(idx, entry_id, done);
            }
            Instruction::Send { dst_core, src, len, tag } => {
                self.cores[idx].transfer_in_flight = true;
                let half = TransferHalf {
                    core_idx: idx,
                    entry: entry_id,
                    addr: *src as u64,
                    len: *len as u64,
                    dispatched: now,
                };
                let key = (core_id, *dst_core, *tag);
                let rv = self.rendezvous.entry(key).or_default();
                rv.send = Some(half);
                if rv.recv.is_some() {
                    let rv = self.rendezvous.remove(&key).unwrap();
                    self.queue_send_recv(core_id, *dst_core, rv);
                }
            }
            Instruction::Recv { src_core, dst, len, tag } => {
                self.cores[idx].transfer_in_flight = true;
                let half = TransferHalf {
                    core_idx: idx,
                    entry: entry_id,
                    addr: *dst as u64,
                    len: *len as u64,
                    dispatched: now,
                };
                let key = (*src_core, core_id, *tag);
                let rv = self.rendezvous.entry(key).or_default();
                rv.recv = Some(half);
                if rv.send.is_some() {
                    let rv = self.rendezvous.remove(&key).unwrap();
                    self.queue_send_recv(*src_core, core_id, rv);
                }
            }
            Instruction::Load { dst, gaddr, len } => {
                self.cores[idx].transfer_in_flight = true;
                self.counts.mem_bytes += *len as u64;
                self.ready_transfers.push(ReadyTransfer {
                    sender_core: core_id,
                    kind: TransferKind::Load,
                    src_node: self.noc.gmem_node(),
                    dst_node: self.cores[idx].node,
                    bytes: *len as u64,
                    send: None,
                    recv: Some(TransferHalf {
                        core_idx: idx,
                        entry: entry_id,
                        addr: *dst as u64,
                        len: *len as u64,
                        dispatched: now,
                    }),
                    gaddr: *gaddr,
                });
            }
            Instruction::Store { gaddr, src, len } => {
                self.cores[idx].transfer_in_flight = true;
                self.counts.mem_bytes += *len as u64;
                self.ready_transfers.push(ReadyTransfer {
                    sender_core: core_id,
                    kind: TransferKind::Store,
                    src_node: self.cores[idx].node,
                    dst_node: self.noc.gmem_node(),
                    bytes: *len as u64,
                    send: Some(TransferHalf {
                        core_idx: idx,
                        entry: entry_id,
                        addr: *src as u64,
                        len: *len as u64,
                        dispatched: now,
                    }),
                    recv: None,
                    gaddr: *gaddr,
                });
            }
        }
        Ok(())
    }

    fn finish_local(&mut self, idx: usize, entry: u64, done: u64) {
        self.push_event(
            done,
            EventKind::Local { core: idx, entry },
        );
    }

    fn queue_send_recv(&mut self, src_core: CoreId, dst_core: CoreId, rv: Rendezvous) {
        let send = rv.send.unwrap();
        let recv = rv.recv.unwrap();
        debug_assert_eq!(send.len, recv.len);
        self.ready_transfers.push(ReadyTransfer {
            sender_core: src_core,
            kind: TransferKind::SendRecv,
            src_node: self.cores[self.core_index[&src_core]].node,
            dst_node: self.cores[self.core_index[&dst_core]].node,
            bytes: send.len,
            send: Some(send),
            recv: Some(recv),
            gaddr: 0,
        });
    }

    /// Transfers become ready during core stepping; claim NoC routes in
    /// deterministic (request cycle, sender core id) order.
    fn launch_ready_transfers(&mut self) {
        if self.ready_transfers.is_empty() {
            return;
        }
        let mut ready = std::mem::take(&mut self.ready_transfers);
        ready.sort_by_key(|r| r.sender_core);
        for r in ready {
            let (sched, route) = self
                .noc
                .schedule(r.src_node, r.dst_node, r.bytes, r.kind, self.now);
            self.counts.noc_byte_hops += r.bytes * sched.hops;
            self.record_links(&route, sched.start, sched.completion, r.bytes);
            let id = self.transfer_seq;
            self.transfer_seq += 1;
            self.in_flight.insert(
                id,
                InFlightTransfer {
                    ready: r,
                    completion: sched.completion,
                },
            );
            self.push_event(sched.completion, EventKind::Transfer { id });
        }
    }

    fn record_links(&mut self, route: &[Link], start: u64, end: u64, bytes: u64) {
        for l in route {
            self.link_trace.push(LinkTraceRecord {
                from: l.from,
                to: l.to,
                start,
                end,
                bytes,
            });
        }
    }

    fn apply_event(&mut self, ev: Event) {
        match ev.kind {
            EventKind::Local { core, entry } => {
                let index = self.complete_entry(core, entry, ev.time);
                // branch resolution redirects fetch at completion
                let core_id = self.cores[core].id;
                let inst = &self.program.cores[&core_id].instructions[index];
                match inst {
                    Instruction::Bne { ra, rb, target } => {
                        let taken =
                            self.cores[core].regs[*ra as usize] != self.cores[core].regs[*rb as usize];
                        if taken {
                            self.cores[core].pc = *target;
                        }
                        self.cores[core].fetch_stalled = false;
                    }
                    Instruction::Jmp { target } => {
                        self.cores[core].pc = *target;
                        self.cores[core].fetch_stalled = false;
                    }
                    _ => {}
                }
            }
            EventKind::Transfer { id } => {
                let t = self.in_flight.remove(&id).expect("transfer in flight");
                let time = t.completion;
                match t.ready.kind {
                    TransferKind::SendRecv => {
                        let send = t.ready.send.unwrap();
                        let recv = t.ready.recv.unwrap();
                        let data: Vec<u8> = self.cores[send.core_idx].mem
                            [send.addr as usize..(send.addr + send.len) as usize]
                            .to_vec();
                        self.cores[recv.core_idx].mem
                            [recv.addr as usize..(recv.addr + recv.len) as usize]
                            .copy_from_slice(&data);
                        self.finish_transfer_half(&send, time);
                        self.finish_transfer_half(&recv, time);
                    }
                    TransferKind::Load => {
                        let recv = t.ready.recv.unwrap();
                        let end = (t.ready.gaddr + recv.len) as usize;
                        if self.gmem.len() < end {
                            self.gmem.resize(end, 0);
                        }
                        let data: Vec<u8> =
                            self.gmem[t.ready.gaddr as usize..end].to_vec();
                        self.cores[recv.core_idx].mem
                            [recv.addr as usize..(recv.addr + recv.len) as usize]
                            .copy_from_slice(&data);
                        self.finish_transfer_half(&recv, time);
                    }
                    TransferKind::Store => {
                        let send = t.ready.send.unwrap();
                        let end = (t.ready.gaddr + send.len) as usize;
                        if self.gmem.len() < end {
                            self.gmem.resize(end, 0);
                        }
                        let data: Vec<u8> = self.cores[send.core_idx].mem
                            [send.addr as usize..(send.addr + send.len) as usize]
                            .to_vec();
                        self.gmem[t.ready.gaddr as usize..end].copy_from_slice(&data);
                        self.finish_transfer_half(&send, time);
                    }
                }
            }
        }
    }

    fn finish_transfer_half(&mut self, half: &TransferHalf, time: u64) {
        let core = &mut self.cores[half.core_idx];
        core.transfer_in_flight = false;
        core.busy_acc[InstrClass::Transfer.index()] += time - half.dispatched;
        self.complete_entry(half.core_idx, half.entry, time);
    }

    fn complete_entry(&mut self, core_idx: usize, entry_id: u64, time: u64) -> usize {
        let core = &mut self.cores[core_idx];
        let pos = core
            .rob
            .iter()
            .position(|e| e.id == entry_id)
            .expect("entry still in ROB");
        let e = &mut core.rob[pos];
        e.status = Status::Done;
        e.complete = time;
        let index = e.index;
        let cp = &self.program.cores[&core.id];
        self.trace.push(TraceRecord {
            core: core.id,
            index,
            mnemonic: cp.instructions[index].mnemonic(),
            class: e.class,
            layer: cp.layers[index],
            issue: e.issue,
            complete: time,
        });
        index
    }

    // ---- functional unit semantics ----

    fn exec_mvm(
        &mut self,
        idx: usize,
        g: &GroupEntry,
        src: u32,
        dst: u32,
        index: usize,
    ) -> Result<u64, SimError> {
        let t = &self.cfg.timing;
        let adcs = self.cfg.core.adcs_per_xbar as u64;
        let core_id = self.cores[idx].id;
        let input: Vec<i8> = self.cores[idx].mem
            [src as usize..(src + g.input_len) as usize]
            .iter()
            .map(|&b| b as i8)
            .collect();
        let mut latency = 0u64;
        for m in &g.members {
            let img = self.program.cores[&core_id]
                .weights
                .get(&m.xbar)
                .ok_or_else(|| SimError::AddressFault {
                    core: core_id,
                    index,
                    msg: format!("xbar {} has no weight image", m.xbar),
                })?;
            for j in 0..m.out_len as usize {
                let mut acc: i32 = 0;
                for (i, &v) in input.iter().enumerate() {
                    acc += v as i32 * img.at(i, j) as i32;
                }
                let at = (dst + m.out_offset) as usize + 4 * j;
                self.cores[idx].mem[at..at + 4].copy_from_slice(&acc.to_le_bytes());
            }
            latency = latency
                .max(t.mvm_setup_cycles + (m.out_len as u64).div_ceil(adcs) * t.adc_cycles_per_sample);
            self.counts.mvm_xbar_activations += 1;
            self.counts.adc_samples += m.out_len as u64;
        }
        Ok(latency)
    }

    /// Returns the instruction's `len` field, which drives vector timing.
    fn exec_vector(&mut self, idx: usize, inst: &Instruction, index: usize) -> Result<u32, SimError> {
        let core_id = self.cores[idx].id;
        let mem = &mut self.cores[idx].mem;
        let len = match *inst {
            Instruction::Vadd { width, dst, src1, src2, len } => {
                match width {
                    ElemWidth::Byte => {
                        for i in 0..len as usize {
                            let a = mem[src1 as usize + i] as i8;
                            let b = mem[src2 as usize + i] as i8;
                            mem[dst as usize + i] = sat_add_i8(a, b) as u8;
                        }
                    }
                    ElemWidth::Word => {
                        for i in 0..len as usize {
                            let a = read_i32(mem, src1 as usize + 4 * i);
                            let b = read_i32(mem, src2 as usize + 4 * i);
                            if a.checked_add(b).is_none() {
                                debug_assert!(
                                    false,
                                    "VADD.w overflow at core {core_id} inst {index}"
                                );
                            }
                            write_i32(mem, dst as usize + 4 * i, a.wrapping_add(b));
                        }
                    }
                }
                len
            }
            Instruction::Vmax { width, dst, src1, src2, len } => {
                match width {
                    ElemWidth::Byte => {
                        for i in 0..len as usize {
                            let a = mem[src1 as usize + i] as i8;
                            let b = mem[src2 as usize + i] as i8;
                            mem[dst as usize + i] = a.max(b) as u8;
                        }
                    }
                    ElemWidth::Word => {
                        for i in 0..len as usize {
                            let a = read_i32(mem, src1 as usize + 4 * i);
                            let b = read_i32(mem, src2 as usize + 4 * i);
                            write_i32(mem, dst as usize + 4 * i, a.max(b));
                        }
                    }
                }
                len
            }
            Instruction::Vrelu { dst, src, len } => {
                for i in 0..len as usize {
                    let v = mem[src as usize + i] as i8;
                    mem[dst as usize + i] = v.max(0) as u8;
                }
                len
            }
            Instruction::Vcopy { dst, src, len, src_stride } => {
                for i in 0..len as usize {
                    mem[dst as usize + i] = mem[src as usize + i * src_stride as usize];
                }
                self.counts.mem_bytes += len as u64;
                len
            }
            Instruction::Vscale { dst, src, len, multiplier, shift } => {
                let q = QuantParams { multiplier, shift };
                for i in 0..len as usize {
                    let acc = read_i32(mem, src as usize + 4 * i);
                    mem[dst as usize + i] = requantize(acc, q) as u8;
                }
                len
            }
            _ => unreachable!("non-vector instruction"),
        };
        self.counts.vector_elems += len as u64;
        Ok(len)
    }

    fn exec_scalar(&mut self, idx: usize, inst: &Instruction) {
        let regs = &mut self.cores[idx].regs;
        match *inst {
            Instruction::Li { reg, imm } => regs[reg as usize] = imm,
            Instruction::Sadd { rd, ra, rb } => {
                regs[rd as usize] = regs[ra as usize].wrapping_add(regs[rb as usize])
            }
            Instruction::Ssub { rd, ra, rb } => {
                regs[rd as usize] = regs[ra as usize].wrapping_sub(regs[rb as usize])
            }
            Instruction::Smul { rd, ra, rb } => {
                regs[rd as usize] = regs[ra as usize].wrapping_mul(regs[rb as usize])
            }
            // branches take effect at completion, in apply_event
            Instruction::Bne { .. } | Instruction::Jmp { .. } => {}
            Instruction::Nop | Instruction::Halt => {}
            _ => unreachable!("non-scalar instruction"),
        }
    }

    fn dump_state(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "watchdog state dump at cycle {}", self.now).unwrap();
        for core in &self.cores {
            writeln!(
                s,
                "core {}: halted={} pc={} fetch_stalled={} transfer_in_flight={}",
                core.id, core.halted, core.pc, core.fetch_stalled, core.transfer_in_flight
            )
            .unwrap();
            let cp = &self.program.cores[&core.id];
            for e in &core.rob {
                writeln!(
                    s,
                    "  rob[{}] {} status={:?}",
                    e.index,
                    cp.instructions[e.index].mnemonic(),
                    e.status
                )
                .unwrap();
            }
        }
        for ((src, dst, tag), rv) in &self.rendezvous {
            let half = match (&rv.send, &rv.recv) {
                (Some(_), None) => "SEND waiting for RECV",
                (None, Some(_)) => "RECV waiting for SEND",
                _ => "inconsistent",
            };
            writeln!(s, "blocked transfer {src}->{dst} tag {tag}: {half}").unwrap();
        }
        s
    }
}

fn read_i32(mem: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(mem[at..at + 4].try_into().unwrap())
}

fn write_i32(mem: &mut [u8], at: usize, v: i32) {
    mem[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn merged_len(intervals: &mut Vec<(u64, u64)>) -> u64 {
    intervals.sort();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for &(s, e) in intervals.iter() {
        cur = match cur {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

fn group_of<'p>(cp: &'p crate::isa::CoreProgram, inst: &Instruction) -> Option<&'p GroupEntry> {
    match inst {
        Instruction::Mvm { group, .. } => cp.group(*group),
        _ => None,
    }
}

/// Byte-interval and register read/write sets used for hazard detection.
fn access_sets(inst: &Instruction, group: Option<&GroupEntry>) -> AccessSets {
    let mut s = AccessSets::default();
    let r = |reg: u8| 1u64 << reg;
    match *inst {
        Instruction::Mvm { src, dst, .. } => {
            if let Some(g) = group {
                s.mem_reads.push((src as u64, src as u64 + g.input_len as u64));
                for m in &g.members {
                    let at = dst as u64 + m.out_offset as u64;
                    s.mem_writes.push((at, at + 4 * m.out_len as u64));
                }
            }
        }
        Instruction::Vadd { width, dst, src1, src2, len }
        | Instruction::Vmax { width, dst, src1, src2, len } => {
            let b = width.bytes() as u64 * len as u64;
            s.mem_reads.push((src1 as u64, src1 as u64 + b));
            s.mem_reads.push((src2 as u64, src2 as u64 + b));
            s.mem_writes.push((dst as u64, dst as u64 + b));
        }
        Instruction::Vrelu { dst, src, len } => {
            s.mem_reads.push((src as u64, src as u64 + len as u64));
            s.mem_writes.push((dst as u64, dst as u64 + len as u64));
        }
        Instruction::Vcopy { dst, src, len, src_stride } => {
            let span = if len == 0 {
                0
            } else {
                (len as u64 - 1) * src_stride as u64 + 1
            };
            s.mem_reads.push((src as u64, src as u64 + span));
            s.mem_writes.push((dst as u64, dst as u64 + len as u64));
        }
        Instruction::Vscale { dst, src, len, .. } => {
            s.mem_reads.push((src as u64, src as u64 + 4 * len as u64));
            s.mem_writes.push((dst as u64, dst as u64 + len as u64));
        }
        Instruction::Send { src, len, .. } => {
            s.mem_reads.push((src as u64, src as u64 + len as u64));
        }
        Instruction::Recv { dst, len, .. } => {
            s.mem_writes.push((dst as u64, dst as u64 + len as u64));
        }
        Instruction::Load { dst, len, .. } => {
            s.mem_writes.push((dst as u64, dst as u64 + len as u64));
        }
        Instruction::Store { src, len, .. } => {
            s.mem_reads.push((src as u64, src as u64 + len as u64));
        }
        Instruction::Li { reg, .. } => s.reg_writes |= r(reg),
        Instruction::Sadd { rd, ra, rb }
        | Instruction::Ssub { rd, ra, rb }
        | Instruction::Smul { rd, ra, rb } => {
            s.reg_reads |= r(ra) | r(rb);
            s.reg_writes |= r(rd);
        }
        Instruction::Bne { ra, rb, .. } => s.reg_reads |= r(ra) | r(rb),
        Instruction::Jmp { .. } | Instruction::Nop | Instruction::Halt => {}
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{GroupMember, WeightImage};

    fn test_cfg() -> ArchConfig {
        let mut cfg = ArchConfig::default();
        cfg.mesh.width = 2;
        cfg.mesh.height = 2;
        cfg.core.xbar_rows = 4;
        cfg.core.xbar_cols = 4;
        cfg.core.local_mem_bytes = 4096;
        cfg
    }

    fn one_core(insts: Vec<Instruction>) -> Program {
        let mut p = Program::default();
        let cp = p.core_mut(0);
        for i in insts {
            cp.push(i, None);
        }
        cp.push(Instruction::Halt, None);
        p
    }

    fn identity_image(n: usize) -> WeightImage {
        let mut img = WeightImage::zeroed(n, n);
        for i in 0..n {
            img.data[i * n + i] = 1;
        }
        img
    }

    #[test]
    fn halt_only_takes_scalar_cycles() {
        let mut p = Program::default();
        p.core_mut(0).push(Instruction::Halt, None);
        p.core_mut(1).push(Instruction::Halt, None);
        let mut cfg = test_cfg();
        cfg.timing.scalar_cycles = 3;
        let r = simulate(&p, &cfg, &[], &SimOptions::default()).unwrap();
        assert_eq!(r.total_cycles, 3);
    }

    #[test]
    fn mvm_identity_widens_to_i32() {
        let mut p = Program::default();
        {
            let cp = p.core_mut(0);
            cp.groups.push(GroupEntry {
                group_id: 0,
                input_len: 4,
                members: vec![GroupMember { xbar: 0, out_offset: 0, out_len: 4 }],
            });
            cp.weights.insert(0, identity_image(4));
            cp.push(Instruction::Load { dst: 0, gaddr: 0, len: 4 }, None);
            cp.push(Instruction::Mvm { group: 0, src: 0, dst: 16 }, None);
            cp.push(Instruction::Store { gaddr: 16, src: 16, len: 16 }, None);
            cp.push(Instruction::Halt, None);
        }
        let gmem = [1u8, 0xFF /* -1 */, 127, 0x80 /* -128 */];
        let r = simulate(&p, &test_cfg(), &gmem, &SimOptions::default()).unwrap();
        let out: Vec<i32> = (0..4)
            .map(|i| i32::from_le_bytes(r.gmem[16 + 4 * i..20 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(out, vec![1, -1, 127, -128]);
    }

    #[test]
    fn mvm_latency_formula() {
        // out_len=128, adcs=1, adc_cycles=1, setup=2 -> 130 cycles
        let mut cfg = test_cfg();
        cfg.core.xbar_rows = 128;
        cfg.core.xbar_cols = 128;
        cfg.timing.mvm_setup_cycles = 2;
        cfg.timing.adc_cycles_per_sample = 1;
        cfg.timing.scalar_cycles = 1;
        let mut p = Program::default();
        {
            let cp = p.core_mut(0);
            cp.groups.push(GroupEntry {
                group_id: 0,
                input_len: 128,
                members: vec![GroupMember { xbar: 0, out_offset: 0, out_len: 128 }],
            });
            cp.weights.insert(0, WeightImage::zeroed(128, 128));
            cp.push(Instruction::Mvm { group: 0, src: 0, dst: 128 }, None);
            cp.push(Instruction::Halt, None);
        }
        let r = simulate(&p, &cfg, &[], &SimOptions::default()).unwrap();
        let mvm = r.trace.iter().find(|t| t.mnemonic == "MVM").unwrap();
        assert_eq!(mvm.complete - mvm.issue, 130);
    }

    #[test]
    fn group_latency_is_max_over_members() {
        // members with out_len 4 and 2: latency = setup + 4*adc
        let mut cfg = test_cfg();
        cfg.timing.mvm_setup_cycles = 2;
        cfg.timing.adc_cycles_per_sample = 3;
        let mut p = Program::default();
        {
            let cp = p.core_mut(0);
            cp.groups.push(GroupEntry {
                group_id: 0,
                input_len: 4,
                members: vec![
                    GroupMember { xbar: 0, out_offset: 0, out_len: 4 },
                    GroupMember { xbar: 1, out_offset: 16, out_len: 2 },
                ],
            });
            cp.weights.insert(0, WeightImage::zeroed(4, 4));
            cp.weights.insert(1, WeightImage::zeroed(4, 4));
            cp.push(Instruction::Mvm { group: 0, src: 0, dst: 64 }, None);
            cp.push(Instruction::Halt, None);
        }
        let r = simulate(&p, &cfg, &[], &SimOptions::default()).unwrap();
        let mvm = r.trace.iter().find(|t| t.mnemonic == "MVM").unwrap();
        assert_eq!(mvm.complete - mvm.issue, 2 + 4 * 3);
    }

    #[test]
    fn vector_semantics_and_latency() {
        let mut cfg = test_cfg();
        cfg.timing.vec_setup_cycles = 1;
        cfg.timing.vec_elems_per_cycle = 32;
        let mut p = Program::default();
        {
            let cp = p.core_mut(0);
            // mem[0..3] = [-3, 0, 7] via LOAD
            cp.push(Instruction::Load { dst: 0, gaddr: 0, len: 3 }, None);
            cp.push(Instruction::Vrelu { dst: 8, src: 0, len: 3 }, None);
            // VSCALE: 1000 * 3 >> 5 rounds to 94
            cp.push(Instruction::Load { dst: 16, gaddr: 8, len: 4 }, None);
            cp.push(
                Instruction::Vscale { dst: 32, src: 16, len: 1, multiplier: 3, shift: 5 },
                None,
            );
            // a long copy for the latency formula: 256 elems at 32/cycle + setup 1
            cp.push(Instruction::Vcopy { dst: 256, src: 0, len: 256, src_stride: 0 }, None);
            cp.push(Instruction::Store { gaddr: 16, src: 8, len: 3 }, None);
            cp.push(Instruction::Store { gaddr: 32, src: 32, len: 1 }, None);
            cp.push(Instruction::Halt, None);
        }
        let mut gmem = vec![0u8; 12];
        gmem[0] = (-3i8) as u8;
        gmem[1] = 0;
        gmem[2] = 7;
        gmem[8..12].copy_from_slice(&1000i32.to_le_bytes());
        let r = simulate(&p, &cfg, &gmem, &SimOptions::default()).unwrap();
        assert_eq!(&r.gmem[16..19], &[0, 0, 7]);
        assert_eq!(r.gmem[32] as i8, 94);
        let copy = r.trace.iter().find(|t| t.mnemonic == "VCOPY").unwrap();
        assert_eq!(copy.complete - copy.issue, 9);
    }

    #[test]
    fn scalar_register_semantics() {
        let p = one_core(vec![
            Instruction::Li { reg: 1, imm: 5 },
            Instruction::Sadd { rd: 2, ra: 1, rb: 1 },
            Instruction::Smul { rd: 3, ra: 2, rb: 2 },
            Instruction::Ssub { rd: 4, ra: 3, rb: 1 },
            // r2 = 10, r3 = 100, r4 = 95
            Instruction::Bne { ra: 0, rb: 0, target: 0 }, // never taken
        ]);
        let r = simulate(&p, &test_cfg(), &[], &SimOptions::default()).unwrap();
        // serial chain of 6 scalar instructions, 1 cycle each
        assert_eq!(r.total_cycles, 6);
        assert_eq!(r.inst_counts[InstrClass::Scalar.index()], 6);
    }

    #[test]
    fn jmp_to_halt_halts() {
        let mut p = Program::default();
        {
            let cp = p.core_mut(0);
            cp.push(Instruction::Jmp { target: 2 }, None);
            cp.push(Instruction::Li { reg: 0, imm: 1 }, None); // skipped
            cp.push(Instruction::Halt, None);
        }
        let r = simulate(&p, &test_cfg(), &[], &SimOptions::default()).unwrap();
        assert_eq!(r.total_cycles, 2);
        assert!(r.trace.iter().all(|t| t.mnemonic != "LI"));
    }

    #[test]
    fn bne_loop_counts_down() {
        // r1 = 3; loop: r1 -= r2(1); BNE r1, r0, loop
        let p = one_core(vec![
            Instruction::Li { reg: 1, imm: 3 },
            Instruction::Li { reg: 2, imm: 1 },
            Instruction::Ssub { rd: 1, ra: 1, rb: 2 },
            Instruction::Bne { ra: 1, rb: 0, target: 2 },
        ]);
        let r = simulate(&p, &test_cfg(), &[], &SimOptions::default()).unwrap();
        let subs = r.trace.iter().filter(|t| t.mnemonic == "SSUB").count();
        assert_eq!(subs, 3);
    }

    #[test]
    fn same_group_serializes_distinct_groups_overlap() {
        let mk = |same_group: bool| {
            let mut p = Program::default();
            let cp = p.core_mut(0);
            cp.groups.push(GroupEntry {
                group_id: 0,
                input_len: 4,
                members: vec![GroupMember { xbar: 0, out_offset: 0, out_len: 4 }],
            });
            cp.groups.push(GroupEntry {
                group_id: 1,
                input_len: 4,
                members: vec![GroupMember { xbar: 1, out_offset: 0, out_len: 4 }],
            });
            cp.weights.insert(0, WeightImage::zeroed(4, 4));
            cp.weights.insert(1, WeightImage::zeroed(4, 4));
            cp.push(Instruction::Mvm { group: 0, src: 0, dst: 64 }, None);
            let second = if same_group { 0 } else { 1 };
            // disjoint destination, so only the structure hazard can serialize
            cp.push(Instruction::Mvm { group: second, src: 0, dst: 128 }, None);
            cp.push(Instruction::Halt, None);
            p
        };
        let cfg = test_cfg();
        let serial = simulate(&mk(true), &cfg, &[], &SimOptions::default()).unwrap();
        let parallel = simulate(&mk(false), &cfg, &[], &SimOptions::default()).unwrap();
        // mvm latency = 2 + 4 = 6
        let mvm_done = |r: &SimResult| {
            r.trace
                .iter()
                .filter(|t| t.mnemonic == "MVM")
                .map(|t| t.complete)
                .max()
                .unwrap()
        };
        assert_eq!(mvm_done(&parallel), 6);
        assert_eq!(mvm_done(&serial), 12);
    }

    #[test]
    fn rob_size_one_is_serial() {
        let mut cfg = test_cfg();
        cfg.core.rob_size = 1;
        cfg.core.dispatch_width = 4;
        let p = one_core(vec![
            Instruction::Vcopy { dst: 0, src: 64, len: 16, src_stride: 1 },
            Instruction::Li { reg: 1, imm: 1 },
            Instruction::Vcopy { dst: 16, src: 64, len: 16, src_stride: 1 },
        ]);
        let r = simulate(&p, &cfg, &[], &SimOptions::default()).unwrap();
        // each vcopy: 1 + 1 = 2; LI: 1; HALT: 1; all strictly serial
        assert_eq!(r.total_cycles, 2 + 1 + 2 + 1);
        // issue order equals program order and never overlaps
        let mut sorted = r.trace.clone();
        sorted.sort_by_key(|t| t.index);
        for pair in sorted.windows(2) {
            assert!(pair[1].issue >= pair[0].complete);
        }
    }

    #[test]
    fn rendezvous_occupies_both_units_from_dispatch() {
        let mut cfg = test_cfg();
        cfg.timing.vec_setup_cycles = 1;
        cfg.timing.vec_elems_per_cycle = 16;
        cfg.timing.transfer_base_cycles = 2;
        cfg.timing.noc_cycles_per_hop = 1;
        cfg.timing.link_bytes_per_cycle = 16;
        let mut p = Program::default();
        {
            let c0 = p.core_mut(0);
            // delay SEND until cycle 10 via a RAW hazard on its source range
            c0.push(Instruction::Vcopy { dst: 0, src: 512, len: 144, src_stride: 0 }, None);
            c0.push(Instruction::Send { dst_core: 1, src: 0, len: 16, tag: 0 }, None);
            c0.push(Instruction::Halt, None);
        }
        {
            let c1 = p.core_mut(1);
            // delay RECV until cycle 50 via a WAW hazard on its destination
            c1.push(Instruction::Vcopy { dst: 0, src: 512, len: 784, src_stride: 0 }, None);
            c1.push(Instruction::Recv { src_core: 0, dst: 0, len: 16, tag: 0 }, None);
            c1.push(Instruction::Halt, None);
        }
        let r = simulate(&p, &cfg, &[], &SimOptions::default()).unwrap();
        let send = r.trace.iter().find(|t| t.mnemonic == "SEND").unwrap();
        let recv = r.trace.iter().find(|t| t.mnemonic == "RECV").unwrap();
        assert_eq!(send.issue, 10);
        assert_eq!(recv.issue, 50);
        // rendezvous at 50; 1 hop; duration = 2 + 1 + 1 = 4
        assert_eq!(send.complete, 54);
        assert_eq!(recv.complete, 54);
        // sender's transfer unit was busy the whole wait
        assert_eq!(r.unit_busy[&0][InstrClass::Transfer.index()], 44);
        assert_eq!(r.unit_busy[&1][InstrClass::Transfer.index()], 4);
    }

    #[test]
    fn send_recv_moves_bytes_exactly() {
        let mut p = Program::default();
        {
            let c0 = p.core_mut(0);
            c0.push(Instruction::Load { dst: 0, gaddr: 0, len: 8 }, None);
            c0.push(Instruction::Send { dst_core: 1, src: 0, len: 8, tag: 0 }, None);
            c0.push(Instruction::Halt, None);
        }
        {
            let c1 = p.core_mut(1);
            c1.push(Instruction::Recv { src_core: 0, dst: 16, len: 8, tag: 0 }, None);
            c1.push(Instruction::Store { gaddr: 64, src: 16, len: 8 }, None);
            c1.push(Instruction::Halt, None);
        }
        let gmem: Vec<u8> = (1..=8).collect();
        let r = simulate(&p, &test_cfg(), &gmem, &SimOptions::default()).unwrap();
        assert_eq!(&r.gmem[64..72], &[1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn unanswered_recv_deadlocks_via_watchdog() {
        let mut p = Program::default();
        {
            let c0 = p.core_mut(0);
            c0.push(Instruction::Recv { src_core: 1, dst: 0, len: 4, tag: 0 }, None);
            c0.push(Instruction::Halt, None);
        }
        {
            // the matching SEND exists but is unreachable behind HALT
            let c1 = p.core_mut(1);
            c1.push(Instruction::Halt, None);
            c1.push(Instruction::Send { dst_core: 0, src: 0, len: 4, tag: 0 }, None);
            c1.push(Instruction::Halt, None);
        }
        let err = simulate(&p, &test_cfg(), &[], &SimOptions::default()).unwrap_err();
        match err {
            SimError::Deadlock { dump, .. } => {
                assert!(dump.contains("RECV waiting for SEND"), "{dump}");
            }
            other => panic!("expected deadlock, got {other}"),
        }
    }

    #[test]
    fn determinism_bit_identical_runs() {
        let mut p = Program::default();
        {
            let c0 = p.core_mut(0);
            c0.push(Instruction::Load { dst: 0, gaddr: 0, len: 16 }, None);
            c0.push(Instruction::Send { dst_core: 1, src: 0, len: 16, tag: 0 }, None);
            c0.push(Instruction::Vcopy { dst: 32, src: 0, len: 16, src_stride: 1 }, None);
            c0.push(Instruction::Halt, None);
        }
        {
            let c1 = p.core_mut(1);
            c1.push(Instruction::Recv { src_core: 0, dst: 0, len: 16, tag: 0 }, None);
            c1.push(Instruction::Vrelu { dst: 16, src: 0, len: 16 }, None);
            c1.push(Instruction::Store { gaddr: 32, src: 16, len: 16 }, None);
            c1.push(Instruction::Halt, None);
        }
        let gmem: Vec<u8> = (0..16).map(|i| (i as i8 - 8) as u8).collect();
        let a = simulate(&p, &test_cfg(), &gmem, &SimOptions::default()).unwrap();
        let b = simulate(&p, &test_cfg(), &gmem, &SimOptions::default()).unwrap();
        assert_eq!(a.total_cycles, b.total_cycles);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.gmem, b.gmem);
        assert_eq!(a.link_trace, b.link_trace);
    }
}
