/**
 * Backbone registry and the seeded feature network.
 *
 * Real pretrained checkpoints cannot ship with this build, so each backbone
 * name maps to a small convolutional feature network whose weights are
 * materialized deterministically from the (backbone, weights tag) pair.
 * Output widths match the published penultimate widths of the named
 * architectures, which is the contract the downstream pipeline relies on.
 */

import * as tf from '@tensorflow/tfjs'
import { fnv1a64, SplitMix64 } from './prng'
import { PATCH_SIZE, RgbPatch } from './png'

export class UnknownBackbone extends Error {}

/** Penultimate feature widths of the reference architectures. */
export const BACKBONE_WIDTHS: Record<string, number> = {
  efficientnet: 1280,
  regnet: 3712,
  densenet: 1920,
  inception: 2048,
  resnet: 2048,
}

export interface ExtractorSpec {
  backbone: string
  weightsTag: string
  outputWidth: number
  patchSize: number
  mean: [number, number, number]
  std: [number, number, number]
}

export function makeSpec(backbone: string, weightsTag = 'seeded-v1'): ExtractorSpec {
  const width = BACKBONE_WIDTHS[backbone]
  if (width === undefined) {
    throw new UnknownBackbone(
      `unknown backbone ${backbone}; choose one of ${Object.keys(BACKBONE_WIDTHS).join(', ')}`,
    )
  }
  return {
    backbone,
    weightsTag,
    outputWidth: width,
    patchSize: PATCH_SIZE,
    mean: [0.485, 0.456, 0.406],
    std: [0.229, 0.224, 0.225],
  }
}

const C1 = 16
const C2 = 32

export class FeatureModel {
  readonly spec: ExtractorSpec
  private k1: tf.Tensor4D
  private b1: tf.Tensor1D
  private k2: tf.Tensor4D
  private b2: tf.Tensor1D
  private w3: tf.Tensor2D
  private b3: tf.Tensor1D

  constructor(spec: ExtractorSpec) {
    this.spec = spec
    const rng = new SplitMix64(fnv1a64(`${spec.backbone}:${spec.weightsTag}`))
    this.k1 = tf.tensor4d(rng.fill(3 * 3 * 3 * C1, 3 * 3 * 3), [3, 3, 3, C1])
    this.b1 = tf.tensor1d(rng.fill(C1, C1))
    this.k2 = tf.tensor4d(rng.fill(3 * 3 * C1 * C2, 3 * 3 * C1), [3, 3, C1, C2])
    this.b2 = tf.tensor1d(rng.fill(C2, C2))
    this.w3 = tf.tensor2d(rng.fill(C2 * spec.outputWidth, C2), [C2, spec.outputWidth])
    this.b3 = tf.tensor1d(rng.fill(spec.outputWidth, C2))
  }

  /** One patch in, one feature row of spec.outputWidth out. */
  extract(patch: RgbPatch): Float32Array {
    const { mean, std } = this.spec
    const n = patch.width * patch.height
    const normalized = new Float32Array(n * 3)
    for (let i = 0; i < n; i++) {
      for (let c = 0; c < 3; c++) {
        normalized[i * 3 + c] = Math.fround(
          (patch.pixels[i * 3 + c] / 255 - mean[c]) / std[c],
        )
      }
    }
    const out = tf.tidy(() => {
      const input = tf.tensor4d(normalized, [1, patch.height, patch.width, 3])
      const h1 = tf.relu(
        tf.add(tf.conv2d(input, this.k1, 4, 'same'), this.b1),
      ) as tf.Tensor4D
      const h2 = tf.relu(
        tf.add(tf.conv2d(h1, this.k2, 2, 'same'), this.b2),
      ) as tf.Tensor4D
      const pooled = tf.mean(h2, [1, 2]) as tf.Tensor2D // global average pool
      return tf.add(tf.matMul(pooled, this.w3), this.b3)
    })
    const values = out.dataSync() as Float32Array
    out.dispose()
    return Float32Array.from(values)
  }

  dispose(): void {
    for (const t of [this.k1, this.b1, this.k2, this.b2, this.w3, this.b3]) {
      t.dispose()
    }
  }
}
