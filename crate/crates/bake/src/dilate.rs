use std::collections::VecDeque;

use lumitex_geometry::TexelSet;

use crate::atlas::TextureAtlas;

/// Fill uncovered texels of `occupied` that are within `radius` 4-connected
/// steps of a covered texel with the value of the nearest one. The search
/// runs breadth-first from all covered texels in id order, so ties go to
/// the lowest-id source. Only occupied texels are traversed or written.
pub fn seam_dilate(atlas: &TextureAtlas, occupied: &TexelSet, radius: usize) -> TextureAtlas {
    let mut out = atlas.clone();
    if radius == 0 {
        return out;
    }
    let res = atlas.res;
    let mut dist = vec![usize::MAX; res * res];
    let mut source = vec![usize::MAX; res * res];
    let mut queue = VecDeque::new();
    for id in atlas.mask.iter() {
        dist[id] = 0;
        source[id] = id;
        queue.push_back(id);
    }
    while let Some(id) = queue.pop_front() {
        if dist[id] == radius {
            continue;
        }
        let (x, y) = (id % res, id / res);
        let mut nbrs = [None; 4];
        if x > 0 {
            nbrs[0] = Some(id - 1);
        }
        if x + 1 < res {
            nbrs[1] = Some(id + 1);
        }
        if y > 0 {
            nbrs[2] = Some(id - res);
        }
        if y + 1 < res {
            nbrs[3] = Some(id + res);
        }
        for n in nbrs.into_iter().flatten() {
            if dist[n] != usize::MAX || !occupied.contains(n) {
                continue;
            }
            dist[n] = dist[id] + 1;
            source[n] = source[id];
            queue.push_back(n);
        }
    }
    for id in 0..res * res {
        if dist[id] != usize::MAX && dist[id] > 0 {
            out.set(id, atlas.get(source[id]));
            out.filled.insert(id);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::Material;

    fn one_texel(res: usize, id: usize) -> TextureAtlas {
        let mut a = TextureAtlas::new(res);
        a.set(
            id,
            Material {
                albedo: [0.9, 0.1, 0.3],
                metallic: 0.4,
                roughness: 0.6,
            },
        );
        a.mask.insert(id);
        a
    }

    #[test]
    fn radius_zero_and_full_coverage_are_identity() {
        let a = one_texel(6, 14);
        assert_eq!(seam_dilate(&a, &TexelSet::full(6), 0), a);
        let mut full = a.clone();
        full.mask = TexelSet::full(6);
        assert_eq!(seam_dilate(&full, &TexelSet::full(6), 3), full);
    }

    #[test]
    fn single_texel_fills_its_occupied_four_neighborhood() {
        let res = 5;
        let center = 2 * res + 2;
        let a = one_texel(res, center);
        let mut occ = TexelSet::full(res);
        occ.remove(center + res);
        let d = seam_dilate(&a, &occ, 1);
        let mut expect = TexelSet::new(res);
        for n in [center - 1, center + 1, center - res] {
            expect.insert(n);
            assert_eq!(d.get(n), a.get(center));
        }
        assert_eq!(d.filled, expect);
        assert_eq!(d.mask, a.mask);
        assert_eq!(d.get(center + res), Material::ZERO);
    }
}
