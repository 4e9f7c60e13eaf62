use std::collections::HashMap;
use std::sync::Mutex;

/// Shared per-table id counters handing out disjoint blocks.
#[derive(Debug)]
pub struct IdAllocator {
    block_size: u64,
    next: Mutex<HashMap<String, u64>>,
}

impl IdAllocator {
    pub fn new(block_size: u64) -> Self {
        Self {
            block_size: block_size.max(1),
            next: Mutex::new(HashMap::new()),
        }
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    /// Reserve the next block for `table`, as an inclusive range.
    pub fn reserve(&self, table: &str) -> (u64, u64) {
        let mut next = self.next.lock().expect("allocator lock");
        let start = next.entry(table.to_string()).or_insert(1);
        let block = (*start, *start + self.block_size - 1);
        *start += self.block_size;
        block
    }
}

/// A worker's view of the allocator: ids are drawn from the current block
/// and a new block is reserved only when it runs out.
#[derive(Debug)]
pub struct IdBlocks<'a> {
    alloc: &'a IdAllocator,
    current: HashMap<String, (u64, u64)>,
}

impl<'a> IdBlocks<'a> {
    pub fn new(alloc: &'a IdAllocator) -> Self {
        Self {
            alloc,
            current: HashMap::new(),
        }
    }

    pub fn next(&mut self, table: &str) -> u64 {
        if let Some((cur, end)) = self.current.get_mut(table) {
            if *cur <= *end {
                let id = *cur;
                *cur += 1;
                return id;
            }
        }
        let (start, end) = self.alloc.reserve(table);
        self.current.insert(table.to_string(), (start + 1, end));
        start
    }
}
