//! Per-key circular FIFO of pending-request metadata, laid out as register
//! arrays the way the hardware tables are: three pointer arrays indexed by
//! CacheIdx and flat metadata arrays where key `c`, offset `i` lives at
//! ReqIdx = c*S + i and nowhere else.

/// Metadata captured from an absorbed read request, enough to rebuild the
/// reply address later.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingMeta {
    pub client_node: u16,
    pub l4port: u16,
    pub seq: u32,
    pub enqueued_ns: u64,
}

#[derive(Debug)]
pub struct RequestTable {
    slots: usize,
    qlen: Vec<u8>,
    front: Vec<u8>,
    rear: Vec<u8>,
    client_addr: Vec<u16>,
    seq: Vec<u32>,
    l4port: Vec<u16>,
    enq_ts: Vec<u64>,
}

impl RequestTable {
    /// `capacity` keys, `slots` metadata slots per key (S).
    pub fn new(capacity: usize, slots: usize) -> RequestTable {
        assert!(slots >= 1 && slots <= u8::MAX as usize);
        RequestTable {
            slots,
            qlen: vec![0; capacity],
            front: vec![0; capacity],
            rear: vec![0; capacity],
            client_addr: vec![0; capacity * slots],
            seq: vec![0; capacity * slots],
            l4port: vec![0; capacity * slots],
            enq_ts: vec![0; capacity * slots],
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn len(&self, c: usize) -> usize {
        self.qlen[c] as usize
    }

    pub fn is_empty(&self, c: usize) -> bool {
        self.qlen[c] == 0
    }

    /// Store one metadata record at ReqIdx = c*S + rear, advance rear mod S.
    /// Returns the ReqIdx used, or Err(()) when the queue is full.
    pub fn enqueue(&mut self, c: usize, meta: PendingMeta) -> Result<usize, ()> {
        if self.qlen[c] as usize == self.slots {
            return Err(());
        }
        let i = self.rear[c] as usize;
        let req_idx = c * self.slots + i;
        self.client_addr[req_idx] = meta.client_node;
        self.seq[req_idx] = meta.seq;
        self.l4port[req_idx] = meta.l4port;
        self.enq_ts[req_idx] = meta.enqueued_ns;
        self.rear[c] = ((i + 1) % self.slots) as u8;
        self.qlen[c] += 1;
        Ok(req_idx)
    }

    pub fn dequeue(&mut self, c: usize) -> Option<PendingMeta> {
        let meta = self.peek(c)?;
        self.front[c] = ((self.front[c] as usize + 1) % self.slots) as u8;
        self.qlen[c] -= 1;
        Some(meta)
    }

    /// Front record without removing it (multi-packet serving reads the
    /// metadata once per fragment).
    pub fn peek(&self, c: usize) -> Option<PendingMeta> {
        if self.qlen[c] == 0 {
            return None;
        }
        let req_idx = c * self.slots + self.front[c] as usize;
        Some(PendingMeta {
            client_node: self.client_addr[req_idx],
            l4port: self.l4port[req_idx],
            seq: self.seq[req_idx],
            enqueued_ns: self.enq_ts[req_idx],
        })
    }

    /// Control-plane flush (flush-on-evict toggle). Returns dropped count.
    pub fn clear(&mut self, c: usize) -> usize {
        let n = self.qlen[c] as usize;
        self.qlen[c] = 0;
        self.front[c] = 0;
        self.rear[c] = 0;
        n
    }

    #[cfg(test)]
    fn raw_snapshot(&self) -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u16>, Vec<u32>, Vec<u16>) {
        (
            self.qlen.clone(),
            self.front.clone(),
            self.rear.clone(),
            self.client_addr.clone(),
            self.seq.clone(),
            self.l4port.clone(),
        )
    }
}
