use std::collections::{BTreeSet, VecDeque};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    layer: u32,
    bytes: u64,
    /// Time the load that brought the layer in completes.
    ready_at: f64,
}

/// LRU page cache for one device's model weights. Layers pinned in VRAM
/// live outside it.
#[derive(Debug, Clone)]
pub struct PageCache {
    capacity: u64,
    used: u64,
    /// Front is least recently touched.
    resident: VecDeque<Entry>,
    gpu_pinned: BTreeSet<u32>,
}

impl PageCache {
    pub fn new(capacity: u64) -> Self {
        PageCache {
            capacity,
            used: 0,
            resident: VecDeque::new(),
            gpu_pinned: BTreeSet::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn pin(&mut self, layer: u32) {
        self.remove(layer);
        self.gpu_pinned.insert(layer);
    }

    pub fn is_pinned(&self, layer: u32) -> bool {
        self.gpu_pinned.contains(&layer)
    }

    /// Completion time of the load that made `layer` resident.
    pub fn ready_at(&self, layer: u32) -> Option<f64> {
        self.resident.iter().find(|e| e.layer == layer).map(|e| e.ready_at)
    }

    /// Mark `layer` most recently used.
    pub fn touch(&mut self, layer: u32) {
        if let Some(i) = self.resident.iter().position(|e| e.layer == layer) {
            let e = self.resident.remove(i).expect("index in range");
            self.resident.push_back(e);
        }
    }

    /// Insert a freshly loaded layer, evicting from the LRU end until it
    /// fits. A layer larger than the whole cache is not retained. Returns
    /// the evicted layers.
    pub fn insert(&mut self, layer: u32, bytes: u64, ready_at: f64) -> Vec<u32> {
        self.remove(layer);
        let mut evicted = Vec::new();
        if bytes > self.capacity {
            return evicted;
        }
        while self.used + bytes > self.capacity {
            let e = self.resident.pop_front().expect("used > 0 implies entries");
            self.used -= e.bytes;
            evicted.push(e.layer);
        }
        self.used += bytes;
        self.resident.push_back(Entry {
            layer,
            bytes,
            ready_at,
        });
        evicted
    }

    pub fn clear(&mut self) {
        self.resident.clear();
        self.used = 0;
    }

    /// Resident layers from least to most recently used.
    pub fn lru_order(&self) -> Vec<u32> {
        self.resident.iter().map(|e| e.layer).collect()
    }

    fn remove(&mut self, layer: u32) {
        if let Some(i) = self.resident.iter().position(|e| e.layer == layer) {
            let e = self.resident.remove(i).expect("index in range");
            self.used -= e.bytes;
        }
    }
}
