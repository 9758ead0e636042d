//! Mesh interconnect model: XY routing, message-level link occupancy, and
//! the timing of core-to-core and global-memory transfers.
//!
//! A transfer holds every link of its route for its whole duration; requests
//! contending for a link are serialized by (request cycle, sender core id).

use crate::config::ArchConfig;

/// Directed link between two adjacent mesh nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Link {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferKind {
    SendRecv,
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledTransfer {
    pub start: u64,
    pub completion: u64,
    pub hops: u64,
}

#[derive(Debug, Clone)]
pub struct Noc {
    width: usize,
    height: usize,
    gmem_node: usize,
    /// busy-until timestamp per directed link, indexed node * 4 + direction.
    link_busy: Vec<u64>,
    transfer_base: u64,
    cycles_per_hop: u64,
    link_bytes_per_cycle: u64,
    gmem_base: u64,
    gmem_bytes_per_cycle: u64,
}

// direction encoding for link indexing
const EAST: usize = 0; // +x
const WEST: usize = 1; // -x
const NORTH: usize = 2; // +y
const SOUTH: usize = 3; // -y

impl Noc {
    pub fn new(cfg: &ArchConfig) -> Self {
        let (gx, gy) = cfg.gmem_coord();
        Self {
            width: cfg.mesh.width,
            height: cfg.mesh.height,
            gmem_node: gy * cfg.mesh.width + gx,
            link_busy: vec![0; cfg.mesh.width * cfg.mesh.height * 4],
            transfer_base: cfg.timing.transfer_base_cycles,
            cycles_per_hop: cfg.timing.noc_cycles_per_hop,
            link_bytes_per_cycle: cfg.timing.link_bytes_per_cycle,
            gmem_base: cfg.timing.gmem_base_cycles,
            gmem_bytes_per_cycle: cfg.timing.gmem_bytes_per_cycle,
        }
    }

    pub fn gmem_node(&self) -> usize {
        self.gmem_node
    }

    fn coord(&self, node: usize) -> (usize, usize) {
        (node % self.width, node / self.width)
    }

    fn link_index(&self, from: usize, to: usize) -> usize {
        let (fx, fy) = self.coord(from);
        let (tx, ty) = self.coord(to);
        let dir = if tx == fx + 1 {
            EAST
        } else if fx == tx + 1 {
            WEST
        } else if ty == fy + 1 {
            NORTH
        } else {
            SOUTH
        };
        from * 4 + dir
    }

    /// X-first-then-Y path from `src` to `dst`; |dx| + |dy| links.
    pub fn route_xy(&self, src: usize, dst: usize) -> Vec<Link> {
        debug_assert!(src < self.width * self.height && dst < self.width * self.height);
        let (mut x, mut y) = self.coord(src);
        let (dx, dy) = self.coord(dst);
        let mut links = Vec::with_capacity(x.abs_diff(dx) + y.abs_diff(dy));
        let push = |links: &mut Vec<Link>, fx: usize, fy: usize, tx: usize, ty: usize| {
            links.push(Link {
                from: fy * self.width + fx,
                to: ty * self.width + tx,
            });
        };
        while x != dx {
            let nx = if dx > x { x + 1 } else { x - 1 };
            push(&mut links, x, y, nx, y);
            x = nx;
        }
        while y != dy {
            let ny = if dy > y { y + 1 } else { y - 1 };
            push(&mut links, x, y, x, ny);
            y = ny;
        }
        links
    }

    /// Cycles a transfer occupies its route, given its byte length.
    pub fn duration(&self, hops: u64, bytes: u64, kind: TransferKind) -> u64 {
        let mut d = self.transfer_base
            + hops * self.cycles_per_hop
            + bytes.div_ceil(self.link_bytes_per_cycle);
        if matches!(kind, TransferKind::Load | TransferKind::Store) {
            d += self.gmem_base + bytes.div_ceil(self.gmem_bytes_per_cycle);
        }
        d
    }

    /// Claim the route for a ready transfer. Callers must invoke this in
    /// (request cycle, sender core id) order; that ordering is the
    /// arbitration policy.
    pub fn schedule(
        &mut self,
        src_node: usize,
        dst_node: usize,
        bytes: u64,
        kind: TransferKind,
        ready: u64,
    ) -> (ScheduledTransfer, Vec<Link>) {
        let route = if src_node == dst_node {
            Vec::new()
        } else {
            self.route_xy(src_node, dst_node)
        };
        let mut start = ready;
        for l in &route {
            start = start.max(self.link_busy[self.link_index(l.from, l.to)]);
        }
        let completion = start + self.duration(route.len() as u64, bytes, kind);
        for l in &route {
            let idx = self.link_index(l.from, l.to);
            debug_assert!(self.link_busy[idx] <= start);
            self.link_busy[idx] = completion;
        }
        (
            ScheduledTransfer {
                start,
                completion,
                hops: route.len() as u64,
            },
            route,
        )
    }
}
