/**
 * Per-patient extraction: patch PNGs + manifest.json in, one .h2rf out.
 *
 * The manifest written by the preprocessing stage fixes the row order;
 * feature row i always corresponds to manifest.patches[i].
 */

import * as fs from 'fs'
import * as path from 'path'
import { ExtractorSpec, FeatureModel } from './backbones'
import { writeH2rfAtomic } from './h2rf'
import { readPatch } from './png'

export interface Manifest {
  patient: string
  patches: string[]
}

export function readManifest(patientDir: string): Manifest {
  const manifestPath = path.join(patientDir, 'manifest.json')
  if (!fs.existsSync(manifestPath)) {
    throw new Error(`${patientDir}: manifest.json not found`)
  }
  const raw = JSON.parse(fs.readFileSync(manifestPath, 'utf-8'))
  if (typeof raw.patient !== 'string' || !Array.isArray(raw.patches)) {
    throw new Error(`${manifestPath}: needs "patient" and "patches" fields`)
  }
  return { patient: raw.patient, patches: raw.patches }
}

export function extractPatient(
  patientDir: string,
  spec: ExtractorSpec,
  outDir: string,
  model?: FeatureModel,
): string {
  const manifest = readManifest(patientDir)
  if (manifest.patches.length === 0) {
    throw new Error(`${patientDir}: manifest lists no patches`)
  }
  const owned = model === undefined
  const net = model ?? new FeatureModel(spec)
  try {
    const width = spec.outputWidth
    const values = new Float32Array(manifest.patches.length * width)
    manifest.patches.forEach((name, row) => {
      const features = net.extract(readPatch(path.join(patientDir, name)))
      values.set(features, row * width)
    })
    const target = path.join(outDir, `${manifest.patient}.h2rf`)
    writeH2rfAtomic(
      {
        patientId: manifest.patient,
        extractorTag: `${spec.backbone}:${spec.weightsTag}`,
        nPatches: manifest.patches.length,
        nFeatures: width,
        values,
      },
      target,
    )
    return target
  } finally {
    if (owned) net.dispose()
  }
}

export interface BatchSummary {
  written: string[]
  failed: Record<string, string>
}

export function extractBatch(
  rootDir: string,
  spec: ExtractorSpec,
  outDir: string,
): BatchSummary {
  const entries = fs
    .readdirSync(rootDir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort()
  if (entries.length === 0) {
    throw new Error(`${rootDir}: no patient directories`)
  }
  const model = new FeatureModel(spec)
  const summary: BatchSummary = { written: [], failed: {} }
  try {
    for (const name of entries) {
      try {
        const target = extractPatient(path.join(rootDir, name), spec, outDir, model)
        summary.written.push(path.basename(target))
      } catch (err) {
        summary.failed[name] = err instanceof Error ? err.message : String(err)
      }
    }
  } finally {
    model.dispose()
  }
  fs.writeFileSync(
    path.join(outDir, 'extract_summary.json'),
    JSON.stringify(summary, null, 2) + '\n',
  )
  return summary
}
