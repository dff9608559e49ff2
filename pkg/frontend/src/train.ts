/**
 * One-shot fixture build: train each tiny network on synthetic glyphs,
 * report accuracies, and export bundle + calibration + eval + pinned
 * reference files, finishing with a sha256 manifest over everything.
 *
 * Usage: node dist/train.js [outputRoot]   (default ../fixtures)
 */

import * as crypto from 'crypto';
import * as fs from 'fs';
import * as path from 'path';

import * as tf from '@tensorflow/tfjs';

import {
  writeCalibration,
  writeModelBundle,
  writeReference,
} from './bundle';
import { Dataset, makeDataset, Rng } from './dataset';
import {
  bundleInputShape,
  exportLayers,
  exportReferenceActivations,
} from './export';
import { buildModel, FixtureSpec, TINY_CNN, TINY_MLP } from './models';

function toTensor(spec: FixtureSpec, data: Dataset): tf.Tensor {
  const { count, side } = data;
  return spec.flatInput
    ? tf.tensor2d(data.images, [count, side * side])
    : tf.tensor4d(data.images, [count, side, side, 1]);
}

function oneHot(labels: Int32Array): tf.Tensor {
  return tf.tidy(() =>
    tf.oneHot(tf.tensor1d(Float32Array.from(labels), 'int32'), 10).toFloat());
}

async function trainModel(spec: FixtureSpec, model: tf.Sequential,
                          data: Dataset): Promise<void> {
  model.compile({
    optimizer: tf.train.adam(spec.learningRate),
    loss: (yTrue, yPred) => tf.losses.softmaxCrossEntropy(yTrue, yPred),
  });
  const xs = toTensor(spec, data);
  const ys = oneHot(data.labels);
  const shuffler = new Rng(spec.seed * 7919 + 17);
  const order = Array.from({ length: data.count }, (_, i) => i);
  for (let epoch = 0; epoch < spec.epochs; epoch++) {
    for (let i = order.length - 1; i > 0; i--) {
      const j = shuffler.int(i + 1);
      [order[i], order[j]] = [order[j], order[i]];
    }
    const idx = tf.tensor1d(Int32Array.from(order), 'int32');
    const ex = tf.gather(xs, idx);
    const ey = tf.gather(ys, idx);
    await model.fit(ex, ey, {
      epochs: 1, batchSize: spec.batchSize, shuffle: false, verbose: 0,
    });
    idx.dispose(); ex.dispose(); ey.dispose();
  }
  xs.dispose(); ys.dispose();
}

function accuracy(spec: FixtureSpec, model: tf.Sequential, data: Dataset): number {
  return tf.tidy(() => {
    const xs = toTensor(spec, data);
    const preds = (model.predict(xs) as tf.Tensor).argMax(1).dataSync();
    let hits = 0;
    for (let i = 0; i < data.count; i++) {
      if (preds[i] === data.labels[i]) hits++;
    }
    return hits / data.count;
  });
}

export async function forgeFixture(spec: FixtureSpec, outRoot: string): Promise<number> {
  const d = spec.dataset;
  const train = makeDataset({ count: d.trainCount, side: d.side, scale: d.scale,
                              sigma: d.sigma, seed: d.seed });
  const calib = makeDataset({ count: d.calibCount, side: d.side, scale: d.scale,
                              sigma: d.sigma, seed: d.seed + 1 });
  const evalSet = makeDataset({ count: d.evalCount, side: d.side, scale: d.scale,
                                sigma: d.sigma, seed: d.seed + 2 });
  const pinned = makeDataset({ count: d.pinnedCount, side: d.side, scale: d.scale,
                               sigma: d.sigma, seed: d.seed + 3 });

  const model = buildModel(spec);
  const t0 = Date.now();
  await trainModel(spec, model, train);
  const trainAcc = accuracy(spec, model, train);
  const evalAcc = accuracy(spec, model, evalSet);
  console.log(`${spec.name}: train acc ${trainAcc.toFixed(4)}, ` +
              `eval acc ${evalAcc.toFixed(4)}, ` +
              `trained in ${((Date.now() - t0) / 1000).toFixed(1)}s`);

  const dir = path.join(outRoot, spec.name);
  const inputShape = bundleInputShape(spec);
  writeModelBundle(dir, inputShape, exportLayers(spec, model));
  // channel count is 1, so height-width(-channel) order already equals
  // channel-height-width order and sample payloads copy through unchanged
  writeCalibration(dir, 'calib', calib.images, inputShape, calib.labels);
  writeCalibration(dir, 'eval', evalSet.images, inputShape, evalSet.labels);
  const pinnedTensor = toTensor(spec, pinned);
  const refs = exportReferenceActivations(spec, model, pinnedTensor);
  writeReference(dir, pinned.images, inputShape, pinned.count, refs);
  pinnedTensor.dispose();
  return evalAcc;
}

function sha256(file: string): string {
  return crypto.createHash('sha256').update(fs.readFileSync(file)).digest('hex');
}

export function writeHashManifest(outRoot: string): void {
  const entries: Record<string, string> = {};
  const walk = (dir: string) => {
    for (const name of fs.readdirSync(dir).sort()) {
      const p = path.join(dir, name);
      if (fs.statSync(p).isDirectory()) {
        walk(p);
      } else if (name !== 'hashes.json') {
        entries[path.relative(outRoot, p)] = sha256(p);
      }
    }
  };
  walk(outRoot);
  fs.writeFileSync(path.join(outRoot, 'hashes.json'),
                   JSON.stringify(entries, Object.keys(entries).sort(), 1) + '\n');
}

async function main(): Promise<void> {
  const outRoot = path.resolve(process.argv[2] ?? path.join(__dirname, '..', '..', 'fixtures'));
  console.log(`writing fixtures to ${outRoot}`);
  for (const spec of [TINY_MLP, TINY_CNN]) {
    await forgeFixture(spec, outRoot);
  }
  writeHashManifest(outRoot);
  console.log('fixture hashes pinned');
}

if (require.main === module) {
  main().catch((err) => {
    console.error(err);
    process.exit(1);
  });
}
