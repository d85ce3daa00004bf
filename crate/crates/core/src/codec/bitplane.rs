/// Fixed-length bit vector packed LSB-first into bytes; pad bits are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlane {
    len: usize,
    bytes: Vec<u8>,
}

impl BitPlane {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            bytes: vec![0; len.div_ceil(8)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut plane = Self::zeros(len);
        plane.bytes.fill(0xff);
        plane.clear_padding();
        plane
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut bytes = Vec::new();
        let mut len = 0;
        for bit in bits {
            if len % 8 == 0 {
                bytes.push(0);
            }
            if bit {
                *bytes.last_mut().unwrap() |= 1 << (len % 8);
            }
            len += 1;
        }
        Self { len, bytes }
    }

    /// Rebuilds a plane from packed bytes. Fails if the byte count is wrong
    /// or any pad bit is set.
    pub fn from_bytes(len: usize, bytes: Vec<u8>) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let plane = Self { len, bytes };
        let rem = len % 8;
        if rem != 0 && plane.bytes.last().is_some_and(|b| b >> rem != 0) {
            return None;
        }
        Some(plane)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for plane of {}", self.len);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    fn clear_padding(&mut self) {
        let rem = self.len % 8;
        if rem != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= (1u8 << rem) - 1;
            }
        }
    }
}
