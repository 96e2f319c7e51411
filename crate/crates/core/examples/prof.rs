use pitchkit::model::{loss_conf, loss_pitch, loss_recon, slices_to_input, SpiceModel};
use pitchkit::nn::{adam_step, AdamParams, LossKind, Tape};
use std::time::Instant;

fn main() {
    let mut model: SpiceModel<f32> = SpiceModel::new(16, 8, 0);
    let t_frames = 64usize;
    let batch = 2 * t_frames;
    let rows_data: Vec<Vec<f32>> = (0..batch)
        .map(|i| {
            (0..128)
                .map(|j| ((i * 131 + j * 17) % 100) as f32 / 100.0 - 0.5)
                .collect()
        })
        .collect();
    let k1: Vec<usize> = (0..t_frames).map(|i| i % 9).collect();
    let k2: Vec<usize> = (0..t_frames).map(|i| (i * 5) % 9).collect();
    let adam = AdamParams::default();

    for name in ["enc fwd", "enc fwd+bwd", "full step"] {
        let iters = 10;
        let mut best = f64::INFINITY;
        for _ in 0..iters {
            let t0 = Instant::now();
            let rows: Vec<&[f32]> = rows_data.iter().map(|r| r.as_slice()).collect();
            let mut tape: Tape<f32> = Tape::new();
            let x = slices_to_input(&mut tape, &rows);
            let (enc, _) = model.encoder.forward(&mut tape, x, true);
            match name {
                "enc fwd" => {}
                "enc fwd+bwd" => {
                    let sq = tape.square(enc.y);
                    let loss = tape.mean_all(sq);
                    tape.backward(loss).unwrap();
                }
                _ => {
                    let y1 = tape.slice_rows(enc.y, 0, t_frames);
                    let y2 = tape.slice_rows(enc.y, t_frames, t_frames);
                    let c1 = tape.slice_rows(enc.c, 0, t_frames);
                    let c2 = tape.slice_rows(enc.c, t_frames, t_frames);
                    let xf = tape.reshape(x, vec![batch, 128]);
                    let x1c = tape.slice_rows(xf, 0, t_frames);
                    let x2c = tape.slice_rows(xf, t_frames, t_frames);
                    let lp = loss_pitch(
                        &mut tape,
                        y1,
                        y2,
                        &k1,
                        &k2,
                        1.0 / 72.0,
                        LossKind::Huber,
                        0.25 / 72.0,
                    );
                    let dy = tape.concat_rows(y1, y2);
                    let (xhat, _) = model.decoder.forward(&mut tape, dy, true);
                    let xh1 = tape.slice_rows(xhat, 0, t_frames);
                    let xh2 = tape.slice_rows(xhat, t_frames, t_frames);
                    let lr = loss_recon(&mut tape, xh1, x1c, xh2, x2c);
                    let lc = loss_conf(&mut tape, y1, y2, c1, c2, &k1, &k2, 1.0 / 72.0);
                    let a = tape.scale(lp, 1.0e4);
                    let b = tape.add(a, lr);
                    let total = tape.add(b, lc);
                    tape.backward(total).unwrap();
                    model.visit_params(&mut |p| {
                        let g = vec![0.0f32; p.data.len()];
                        adam_step(&mut p.data, &g, &mut p.adam, &adam);
                    });
                }
            }
            std::hint::black_box(tape.data(enc.y)[0]);
            best = best.min(t0.elapsed().as_secs_f64());
        }
        println!("{name}: {:.1} ms/iter (min)", best * 1000.0);
    }
}
