//! Stable LSD radix sort of `(key, payload)` pairs.

/// Sorts by `key` ascending; equal keys keep their input order.
pub fn radix_sort(items: &mut Vec<(u64, u32)>) {
    if items.len() < 2 {
        return;
    }
    let mut buf = vec![(0u64, 0u32); items.len()];
    for pass in 0..8 {
        let shift = pass * 8;
        let mut counts = [0usize; 256];
        for &(k, _) in items.iter() {
            counts[((k >> shift) & 0xff) as usize] += 1;
        }
        if counts.iter().any(|&c| c == items.len()) {
            continue;
        }
        let mut offsets = [0usize; 256];
        let mut acc = 0;
        for (o, c) in offsets.iter_mut().zip(counts) {
            *o = acc;
            acc += c;
        }
        for &item in items.iter() {
            let b = ((item.0 >> shift) & 0xff) as usize;
            buf[offsets[b]] = item;
            offsets[b] += 1;
        }
        std::mem::swap(items, &mut buf);
    }
}

/// Order-preserving map from a non-negative depth to a sort key.
#[inline]
pub fn depth_key(depth: f64) -> u64 {
    debug_assert!(depth >= 0.0);
    depth.to_bits()
}
