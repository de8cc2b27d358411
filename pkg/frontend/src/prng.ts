/**
 * Deterministic PRNG used to materialize backbone weights.
 *
 * splitmix64 over BigInt state, reduced to float32-safe uniforms. The same
 * (backbone, weights tag) pair always yields the same weight stream, which
 * is what makes extractor output byte-stable across runs and machines.
 */

const MASK64 = (1n << 64n) - 1n

export function fnv1a64(text: string): bigint {
  let hash = 0xcbf29ce484222325n
  const bytes = Buffer.from(text, 'utf-8')
  for (const b of bytes) {
    hash ^= BigInt(b)
    hash = (hash * 0x100000001b3n) & MASK64
  }
  return hash
}

export class SplitMix64 {
  private state: bigint

  constructor(seed: bigint) {
    this.state = seed & MASK64
  }

  nextUint64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK64
    let z = this.state
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64
    return z ^ (z >> 31n)
  }

  /** Uniform in [-1, 1), rounded through float32. */
  nextSymmetric(): number {
    const top = Number(this.nextUint64() >> 40n) // 24 bits
    return Math.fround(top / 2 ** 23 - 1.0)
  }

  /** He-style uniform fan-in fill for a weight tensor. */
  fill(count: number, fanIn: number): Float32Array {
    const bound = Math.sqrt(6.0 / fanIn)
    const out = new Float32Array(count)
    for (let i = 0; i < count; i++) {
      out[i] = Math.fround(this.nextSymmetric() * bound)
    }
    return out
  }
}
