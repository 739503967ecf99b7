/**
 * Flat-array access to the curvitopo loss and metric kernels.
 *
 * Volumes travel as contiguous Float32Array buffers in x-fastest order plus
 * a [nx, ny, nz] shape; calls round-trip through the toolkit's NPY file
 * format and command-line interface, so results are numerically identical
 * to the toolkit's own outputs.
 */

import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { encodeNpy, decodeNpy, Shape3 } from "./npy.js";
import { runCli, ValidationError } from "./runner.js";

export { ValidationError, ToolkitError } from "./runner.js";
export { encodeNpy, decodeNpy } from "./npy.js";
export type { Shape3, Volume3 } from "./npy.js";

export interface LossResult {
  value: number;
  /** d(loss)/d(prediction), x-fastest order, same shape as the inputs */
  gradient: Float32Array;
  flags: string[];
}

export interface MetricReport {
  dice: number;
  cldice: number;
  rho_dice: number;
  ari: number;
  betti0_error: number;
  betti1_error: number;
  flags?: string[];
}

function checkVolume(name: string, data: Float32Array, shape: Shape3): void {
  if (!(data instanceof Float32Array)) {
    throw new ValidationError(`${name} must be a Float32Array`);
  }
  if (shape.length !== 3 || shape.some((s) => !Number.isInteger(s) || s < 1)) {
    throw new ValidationError(`shape must be three positive integers, got ${shape}`);
  }
  const n = shape[0] * shape[1] * shape[2];
  if (data.length !== n) {
    throw new ValidationError(
      `${name} holds ${data.length} values, shape ${shape} needs ${n}`,
    );
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new ValidationError(`${name} contains NaN or Inf at index ${i}`);
    }
  }
}

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "curvitopo-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

function evalLoss(
  loss: "gats" | "cldice",
  pred: Float32Array,
  target: Float32Array,
  shape: Shape3,
  alpha: number,
  k: number,
): LossResult {
  checkVolume("pred", pred, shape);
  checkVolume("target", target, shape);
  if (alpha < 0 || alpha > 1) {
    throw new ValidationError(`alpha must be in [0, 1], got ${alpha}`);
  }
  if (!Number.isInteger(k) || k < 0) {
    throw new ValidationError(`k must be a non-negative integer, got ${k}`);
  }
  return withTempDir((dir) => {
    const predPath = join(dir, "pred.npy");
    const gtPath = join(dir, "gt.npy");
    const gradPath = join(dir, "grad.npy");
    writeFileSync(predPath, encodeNpy(pred, shape));
    writeFileSync(gtPath, encodeNpy(target, shape));
    const { stdout } = runCli([
      "loss-eval",
      "--pred", predPath,
      "--gt", gtPath,
      "--loss", loss,
      "--alpha", String(alpha),
      "--k", String(k),
      "--grad-out", gradPath,
    ]);
    const body = JSON.parse(stdout);
    const grad = decodeNpy(readFileSync(gradPath));
    return {
      value: body.loss as number,
      gradient: grad.data,
      flags: (body.flags ?? []) as string[],
    };
  });
}

/** (1-alpha)(1-Dice) + alpha(1-GATS) over smoothed outputs, with gradient. */
export function gatsLoss(
  pred: Float32Array,
  target: Float32Array,
  shape: Shape3,
  alpha = 0.5,
  k = 3,
): LossResult {
  return evalLoss("gats", pred, target, shape, alpha, k);
}

/** Same combination over soft skeletons instead of smoothed outputs. */
export function cldiceLoss(
  pred: Float32Array,
  target: Float32Array,
  shape: Shape3,
  alpha = 0.65,
  k = 3,
): LossResult {
  return evalLoss("cldice", pred, target, shape, alpha, k);
}

/** Full evaluation mapping for one prediction/ground-truth pair. */
export function computeMetrics(
  pred: Float32Array,
  gt: Float32Array,
  shape: Shape3,
  k = 3,
  rho = 2.0,
): MetricReport {
  checkVolume("pred", pred, shape);
  checkVolume("gt", gt, shape);
  if (rho < 0) {
    throw new ValidationError(`rho must be >= 0, got ${rho}`);
  }
  return withTempDir((dir) => {
    const predPath = join(dir, "pred.npy");
    const gtPath = join(dir, "gt.npy");
    writeFileSync(predPath, encodeNpy(pred, shape));
    writeFileSync(gtPath, encodeNpy(gt, shape));
    const { stdout } = runCli([
      "metrics",
      "--pred", predPath,
      "--gt", gtPath,
      "--k", String(k),
      "--rho", String(rho),
      "--out-format", "json",
    ]);
    const body = JSON.parse(stdout.trim().split("\n")[0]);
    delete body.pred;
    delete body.gt;
    return body as MetricReport;
  });
}
