//! Byte stuffing: every `FF FF FD` in a payload is followed by an extra `FD`
//! so that the header pattern never appears inside a frame body.

const PATTERN: [u8; 3] = [0xFF, 0xFF, 0xFD];

pub fn stuff(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() + data.len() / 8);
    for &b in data {
        out.push(b);
        if out.len() >= 3 && out[out.len() - 3..] == PATTERN {
            out.push(0xFD);
        }
    }
    out
}

/// Inverse of [`stuff`]. Input that was not produced by `stuff` is passed
/// through with every `FF FF FD FD` collapsed.
pub fn unstuff(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    let mut i = 0;
    while i < data.len() {
        out.push(data[i]);
        i += 1;
        if out.len() >= 3 && out[out.len() - 3..] == PATTERN && data.get(i) == Some(&0xFD) {
            i += 1;
        }
    }
    out
}

/// Length `stuff(data)` would have, without allocating.
pub fn stuffed_len(data: &[u8]) -> usize {
    stuff_count(data) + data.len()
}

fn stuff_count(data: &[u8]) -> usize {
    // Stuffing inserts bytes *after* a match, and the inserted FD can't start
    // a new FF FF FD, so matches in the original bytes are counted directly.
    data.windows(3).filter(|w| *w == PATTERN).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stays_empty() {
        assert!(stuff(&[]).is_empty());
    }

    #[test]
    fn no_pattern_untouched() {
        assert_eq!(stuff(&[1, 2, 3]), vec![1, 2, 3]);
    }

    #[test]
    fn pattern_gets_extra_fd() {
        let s = stuff(&[0xFF, 0xFF, 0xFD, 0x00]);
        assert_eq!(s, vec![0xFF, 0xFF, 0xFD, 0xFD, 0x00]);
        assert_eq!(unstuff(&s), vec![0xFF, 0xFF, 0xFD, 0x00]);
    }

    #[test]
    fn repeated_patterns() {
        let raw = [0xFF, 0xFF, 0xFD, 0xFF, 0xFF, 0xFD, 0xFD];
        let s = stuff(&raw);
        assert_eq!(s, vec![0xFF, 0xFF, 0xFD, 0xFD, 0xFF, 0xFF, 0xFD, 0xFD, 0xFD]);
        assert_eq!(unstuff(&s), raw);
        assert_eq!(stuffed_len(&raw), s.len());
    }

    #[test]
    fn run_of_ff_then_fd() {
        let raw = [0xFF, 0xFF, 0xFF, 0xFF, 0xFD];
        let s = stuff(&raw);
        assert_eq!(s, vec![0xFF, 0xFF, 0xFF, 0xFF, 0xFD, 0xFD]);
        assert_eq!(unstuff(&s), raw);
    }
}
