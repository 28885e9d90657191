use crate::lora::{LoraAdapter, LoraConfig};
use crate::numerics::Matrix;

pub const BYTES_PER_ELEMENT: u64 = 4;

/// Bytes to ship a config's adapters on `width_out x width_in` blocks plus
/// the head: `sum(r) * (m + q) * linears * 4 + head_bytes`.
pub fn payload_bytes(
    config: &LoraConfig,
    width_out: usize,
    width_in: usize,
    linears_per_block: usize,
    head_bytes: u64,
) -> u64 {
    config.rank_sum() as u64 * (width_out + width_in) as u64 * linears_per_block as u64 * BYTES_PER_ELEMENT + head_bytes
}

pub fn matrix_bytes(m: &Matrix) -> u64 {
    m.len() as u64 * BYTES_PER_ELEMENT
}

/// Counts bytes from the matrices actually handed over at each transfer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficCounter {
    linears_per_block: u64,
    up: u64,
    down: u64,
}

impl TrafficCounter {
    pub fn new(linears_per_block: usize) -> Self {
        TrafficCounter {
            linears_per_block: linears_per_block as u64,
            up: 0,
            down: 0,
        }
    }

    fn transfer_bytes(&self, adapters: &[LoraAdapter], head: &Matrix) -> u64 {
        let adapter: u64 = adapters.iter().map(|a| matrix_bytes(a.b()) + matrix_bytes(a.a())).sum();
        adapter * self.linears_per_block + matrix_bytes(head)
    }

    /// Records a server-to-device send and returns its size.
    pub fn download(&mut self, adapters: &[LoraAdapter], head: &Matrix) -> u64 {
        let bytes = self.transfer_bytes(adapters, head);
        self.down += bytes;
        bytes
    }

    /// Records a device-to-server send and returns its size.
    pub fn upload(&mut self, adapters: &[LoraAdapter], head: &Matrix) -> u64 {
        let bytes = self.transfer_bytes(adapters, head);
        self.up += bytes;
        bytes
    }

    pub fn up(&self) -> u64 {
        self.up
    }

    pub fn down(&self) -> u64 {
        self.down
    }

    pub fn total(&self) -> u64 {
        self.up + self.down
    }
}
