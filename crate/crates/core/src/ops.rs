//! Kernels of the builtin operator set.
//!
//! Parameter indices follow the alphabetical order of each schema. Every
//! kernel is pure: noise generators derive all randomness from their `seed`
//! parameter through an integer hash.

use crate::image::{sanitize, ChannelImage};
use crate::library::KernelContext;

const TAU: f32 = std::f32::consts::TAU;

pub fn passthrough(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    vec![ctx.inputs[0].clone()]
}

pub fn uniform_color(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    vec![ChannelImage::constant(ctx.width, ctx.height, &ctx.params.vec3(0))]
}

pub fn uniform_gray(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    vec![ChannelImage::constant(ctx.width, ctx.height, &[ctx.params.scalar(0)])]
}

pub fn checker(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let tiles = ctx.params.int(0) as f32;
    vec![ChannelImage::from_fn_gray(ctx.width, ctx.height, |u, v| {
        let parity = ((u * tiles).floor() + (v * tiles).floor()) as i64;
        (parity.rem_euclid(2)) as f32
    })]
}

pub fn brick(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let p = ctx.params;
    let bevel = p.scalar(0).max(1e-3);
    let columns = p.int(1) as f32;
    let offset = p.scalar(2);
    let rows = p.int(3) as f32;
    const MORTAR: f32 = 0.05;
    vec![ChannelImage::from_fn_gray(ctx.width, ctx.height, |u, v| {
        let row = (v * rows).floor();
        let shift = if row as i64 % 2 == 1 { offset } else { 0.0 };
        let bu = u * columns + shift;
        let fx = bu - bu.floor();
        let fy = v * rows - row;
        let d = fx.min(1.0 - fx).min(fy).min(1.0 - fy);
        (d - MORTAR) / bevel
    })]
}

/// 32-bit integer hash mapped to [0, 1).
fn hash01(seed: i64, x: i64, y: i64) -> f32 {
    let mut h = (seed as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (x as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (y as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Periodic lattice value noise at one frequency.
fn lattice_noise(seed: i64, period: i64, u: f32, v: f32) -> f32 {
    let x = u * period as f32;
    let y = v * period as f32;
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (smooth(x - x0), smooth(y - y0));
    let (xi, yi) = (x0 as i64, y0 as i64);
    let at = |i: i64, j: i64| hash01(seed, i.rem_euclid(period), j.rem_euclid(period));
    let a = at(xi, yi);
    let b = at(xi + 1, yi);
    let c = at(xi, yi + 1);
    let d = at(xi + 1, yi + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

pub fn value_noise(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let p = ctx.params;
    let octaves = p.int(0);
    let persistence = p.scalar(1);
    let scale = p.int(2);
    let seed = p.int(3);
    vec![ChannelImage::from_fn_gray(ctx.width, ctx.height, |u, v| {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        for o in 0..octaves {
            total += amp * lattice_noise(seed * 31 + o, scale << o, u, v);
            norm += amp;
            amp *= persistence;
        }
        if norm > 0.0 {
            total / norm
        } else {
            0.0
        }
    })]
}

pub fn gradient_ramp(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let angle = ctx.params.scalar(0) * TAU;
    let (s, c) = angle.sin_cos();
    vec![ChannelImage::from_fn_gray(ctx.width, ctx.height, |u, v| (u - 0.5) * c + (v - 0.5) * s + 0.5)]
}

pub fn polygon(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let p = ctx.params;
    let radius = p.scalar(0) * 0.5;
    let sides = p.int(1) as f32;
    let tiles = p.int(2) as f32;
    let sector = TAU / sides;
    vec![ChannelImage::from_fn_gray(ctx.width, ctx.height, |u, v| {
        let lu = (u * tiles).fract() - 0.5;
        let lv = (v * tiles).fract() - 0.5;
        let r = (lu * lu + lv * lv).sqrt();
        let theta = lv.atan2(lu).rem_euclid(sector) - sector * 0.5;
        let edge = radius * (sector * 0.5).cos() / theta.cos();
        if r <= edge {
            1.0
        } else {
            0.0
        }
    })]
}

pub fn cell_noise(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let p = ctx.params;
    let jitter = p.scalar(0);
    let scale = p.int(1);
    let seed = p.int(2);
    vec![ChannelImage::from_fn_gray(ctx.width, ctx.height, |u, v| {
        let x = u * scale as f32;
        let y = v * scale as f32;
        let (cx, cy) = (x.floor() as i64, y.floor() as i64);
        let mut best = f32::MAX;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (gx, gy) = (cx + dx, cy + dy);
                let (wx, wy) = (gx.rem_euclid(scale), gy.rem_euclid(scale));
                let px = gx as f32 + 0.5 + jitter * (hash01(seed, wx, wy) - 0.5);
                let py = gy as f32 + 0.5 + jitter * (hash01(seed + 7919, wx, wy) - 0.5);
                let d = ((px - x).powi(2) + (py - y).powi(2)).sqrt();
                best = best.min(d);
            }
        }
        best
    })]
}

pub fn invert(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    vec![ctx.inputs[0].map(|v| 1.0 - v)]
}

pub fn levels(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let p = ctx.params;
    let gamma = p.scalar(0);
    let in_high = p.scalar(1);
    let in_low = p.scalar(2);
    let out_high = p.scalar(3);
    let out_low = p.scalar(4);
    let mut span = in_high - in_low;
    if span.abs() < 1e-4 {
        span = 1e-4;
    }
    vec![ctx.inputs[0].map(|v| {
        let t = sanitize((v - in_low) / span);
        out_low + (out_high - out_low) * t.powf(1.0 / gamma)
    })]
}

fn box_blur(img: &ChannelImage, radius: usize) -> ChannelImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let norm = 1.0 / (2 * radius + 1) as f32;
    let mut tmp = vec![0.0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0.0;
                for k in -(radius as isize)..=radius as isize {
                    s += img.get_wrapped(x as isize + k, y as isize, c);
                }
                tmp[(y * w + x) * ch + c] = s * norm;
            }
        }
    }
    let tmp = ChannelImage { width: w, height: h, channels: ch, data: tmp };
    let mut out = vec![0.0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0.0;
                for k in -(radius as isize)..=radius as isize {
                    s += tmp.get_wrapped(x as isize, y as isize + k, c);
                }
                out[(y * w + x) * ch + c] = sanitize(s * norm);
            }
        }
    }
    ChannelImage { width: w, height: h, channels: ch, data: out }
}

pub fn blur(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let radius = (ctx.params.scalar(0) * ctx.width as f32).round() as usize;
    vec![box_blur(&ctx.inputs[0], radius)]
}

pub fn sharpen(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let amount = ctx.params.scalar(0);
    let src = &ctx.inputs[0];
    let soft = box_blur(src, 1);
    let data = src.data.iter().zip(&soft.data).map(|(&v, &b)| sanitize(v + amount * (v - b))).collect();
    vec![ChannelImage { data, ..src.clone() }]
}

fn resample(src: &ChannelImage, width: usize, height: usize, f: impl Fn(f32, f32) -> (f32, f32)) -> ChannelImage {
    let ch = src.channels;
    let mut data = Vec::with_capacity(width * height * ch);
    for y in 0..height {
        let v = (y as f32 + 0.5) / height as f32;
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32;
            let (su, sv) = f(u, v);
            for c in 0..ch {
                data.push(sanitize(src.sample(su, sv, c)));
            }
        }
    }
    ChannelImage { width, height, channels: ch, data }
}

pub fn transform_2d(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let p = ctx.params;
    let [ox, oy] = p.vec2(0);
    let (s, c) = (p.scalar(1) * TAU).sin_cos();
    let [sx, sy] = p.vec2(2);
    vec![resample(&ctx.inputs[0], ctx.width, ctx.height, |u, v| {
        let (du, dv) = (u - 0.5 - ox, v - 0.5 - oy);
        let ru = c * du + s * dv;
        let rv = -s * du + c * dv;
        (ru / sx + 0.5, rv / sy + 0.5)
    })]
}

pub fn tile(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let tx = ctx.params.int(0) as f32;
    let ty = ctx.params.int(1) as f32;
    vec![resample(&ctx.inputs[0], ctx.width, ctx.height, |u, v| ((u * tx).fract(), (v * ty).fract()))]
}

/// Central-difference luminance gradient in normalized image units.
fn luma_gradient(img: &ChannelImage, x: usize, y: usize) -> (f32, f32) {
    let l = |dx: isize, dy: isize| {
        let xx = (x as isize + dx).rem_euclid(img.width as isize) as usize;
        let yy = (y as isize + dy).rem_euclid(img.height as isize) as usize;
        img.luma(xx, yy)
    };
    let gx = (l(1, 0) - l(-1, 0)) * 0.5 * img.width as f32;
    let gy = (l(0, 1) - l(0, -1)) * 0.5 * img.height as f32;
    (gx, gy)
}

pub fn warp(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let amount = ctx.params.scalar(0) / 32.0;
    let src = &ctx.inputs[0];
    let map = &ctx.inputs[1];
    let (w, h, ch) = (ctx.width, ctx.height, src.channels);
    let mut data = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = luma_gradient(map, x, y);
            let u = (x as f32 + 0.5) / w as f32 + amount * gx;
            let v = (y as f32 + 0.5) / h as f32 + amount * gy;
            for c in 0..ch {
                data.push(sanitize(src.sample(u, v, c)));
            }
        }
    }
    vec![ChannelImage { width: w, height: h, channels: ch, data }]
}

pub fn blend(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let mode = ctx.params.int(0);
    let opacity = ctx.params.scalar(1);
    let (mut fg, mut bg) = (ctx.inputs[0].clone(), ctx.inputs[1].clone());
    if fg.channels != bg.channels {
        fg = fg.to_rgb();
        bg = bg.to_rgb();
    }
    let data = fg
        .data
        .iter()
        .zip(&bg.data)
        .map(|(&f, &b)| {
            let mixed = match mode {
                0 => f,
                1 => f + b,
                2 => f * b,
                3 => 1.0 - (1.0 - f) * (1.0 - b),
                _ => b - f,
            };
            sanitize(b + opacity * (sanitize(mixed) - b))
        })
        .collect();
    vec![ChannelImage { data, ..bg }]
}

pub fn grayscale_to_color(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let tint = ctx.params.vec3(0);
    let g = ctx.inputs[0].to_gray();
    let data = g.data.iter().flat_map(|&v| tint.map(|t| sanitize(v * t))).collect();
    vec![ChannelImage { width: g.width, height: g.height, channels: 3, data }]
}

pub fn color_to_grayscale(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let wts = ctx.params.vec3(0);
    let total: f32 = wts.iter().sum::<f32>().max(1e-6);
    let rgb = ctx.inputs[0].to_rgb();
    let data = rgb
        .data
        .chunks(3)
        .map(|px| sanitize((px[0] * wts[0] + px[1] * wts[1] + px[2] * wts[2]) / total))
        .collect();
    vec![ChannelImage { width: rgb.width, height: rgb.height, channels: 1, data }]
}

pub fn threshold(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let level = ctx.params.scalar(0);
    let soft = ctx.params.scalar(1);
    vec![ctx.inputs[0].map(|v| {
        if soft <= 0.0 {
            if v >= level {
                1.0
            } else {
                0.0
            }
        } else {
            smooth(sanitize((v - level + soft) / (2.0 * soft)))
        }
    })]
}

pub fn gradient_map(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let mut keys: Vec<[f32; 4]> = ctx
        .params
        .raw(0)
        .chunks_exact(4)
        .map(|k| [k[0] as f32, k[1] as f32, k[2] as f32, k[3] as f32])
        .collect();
    keys.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let g = ctx.inputs[0].to_gray();
    let lookup = |t: f32| -> [f32; 3] {
        let first = keys[0];
        let last = keys[keys.len() - 1];
        if t <= first[0] {
            return [first[1], first[2], first[3]];
        }
        if t >= last[0] {
            return [last[1], last[2], last[3]];
        }
        let i = keys.iter().position(|k| k[0] > t).unwrap_or(keys.len() - 1);
        let (a, b) = (keys[i - 1], keys[i]);
        let s = if b[0] > a[0] { (t - a[0]) / (b[0] - a[0]) } else { 0.0 };
        [a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s, a[3] + (b[3] - a[3]) * s]
    };
    let data = g.data.iter().flat_map(|&v| lookup(v).map(sanitize)).collect();
    vec![ChannelImage { width: g.width, height: g.height, channels: 3, data }]
}

pub fn normal_from_height(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let strength = ctx.params.scalar(0) / 32.0;
    let hmap = &ctx.inputs[0];
    let (w, h) = (hmap.width, hmap.height);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = luma_gradient(hmap, x, y);
            let (nx, ny, nz) = (-strength * gx, -strength * gy, 1.0f32);
            let len = (nx * nx + ny * ny + nz * nz).sqrt();
            data.extend([nx / len, ny / len, nz / len].map(|n| sanitize(n * 0.5 + 0.5)));
        }
    }
    vec![ChannelImage { width: w, height: h, channels: 3, data }]
}

pub fn height_from_grayscale(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let contrast = ctx.params.scalar(0);
    let offset = ctx.params.scalar(1);
    vec![ctx.inputs[0].to_gray().map(|v| (v - 0.5) * contrast + 0.5 + offset)]
}

pub fn channel_merge(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let [r, g, b] = [0, 1, 2].map(|i| ctx.inputs[i].to_gray());
    let data = (0..r.data.len()).flat_map(|i| [r.data[i], g.data[i], b.data[i]]).collect();
    vec![ChannelImage { width: r.width, height: r.height, channels: 3, data }]
}

pub fn channel_split(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let src = &ctx.inputs[0];
    if src.channels == 1 {
        return vec![src.clone(), src.clone(), src.clone()];
    }
    (0..3)
        .map(|c| ChannelImage {
            width: src.width,
            height: src.height,
            channels: 1,
            data: src.data.iter().skip(c).step_by(3).copied().collect(),
        })
        .collect()
}

pub fn edge_detect(ctx: &KernelContext<'_>) -> Vec<ChannelImage> {
    let gain = ctx.params.scalar(0) / 64.0;
    let src = &ctx.inputs[0];
    let mut data = Vec::with_capacity(src.width * src.height);
    for y in 0..src.height {
        for x in 0..src.width {
            let (gx, gy) = luma_gradient(src, x, y);
            data.push(sanitize(gain * (gx * gx + gy * gy).sqrt()));
        }
    }
    vec![ChannelImage { width: src.width, height: src.height, channels: 1, data }]
}
