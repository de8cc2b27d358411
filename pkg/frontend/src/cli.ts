/**
 * CLI: extract features for one patient directory or a root of them.
 *
 *   node dist/cli.js extract       --backbone resnet --input <patient dir> --output <dir>
 *   node dist/cli.js extract-batch --backbone resnet --input <root dir>    --output <dir>
 *
 * Exit codes: 0 success, 1 extraction failure, 2 usage error.
 */

import * as fs from 'fs'
import { makeSpec, UnknownBackbone, BACKBONE_WIDTHS } from './backbones'
import { extractBatch, extractPatient } from './extract'

function parseFlags(argv: string[]): Record<string, string> {
  const flags: Record<string, string> = {}
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i]
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new UsageError(`malformed arguments near ${key}`)
    }
    flags[key.slice(2)] = argv[i + 1]
  }
  return flags
}

class UsageError extends Error {}

function main(argv: string[]): number {
  const [command, ...rest] = argv
  try {
    if (command !== 'extract' && command !== 'extract-batch') {
      throw new UsageError(
        `usage: cli.js extract|extract-batch --backbone <${Object.keys(
          BACKBONE_WIDTHS,
        ).join('|')}> --input <dir> --output <dir>`,
      )
    }
    const flags = parseFlags(rest)
    for (const required of ['backbone', 'input', 'output']) {
      if (!(required in flags)) throw new UsageError(`missing --${required}`)
    }
    const spec = makeSpec(flags.backbone, flags['weights-tag'] ?? 'seeded-v1')
    if (!fs.existsSync(flags.input)) {
      throw new UsageError(`input directory not found: ${flags.input}`)
    }
    fs.mkdirSync(flags.output, { recursive: true })

    if (command === 'extract') {
      const target = extractPatient(flags.input, spec, flags.output)
      console.log(`wrote ${target}`)
      return 0
    }
    const summary = extractBatch(flags.input, spec, flags.output)
    console.log(
      `wrote ${summary.written.length} file(s), ` +
        `${Object.keys(summary.failed).length} failure(s)`,
    )
    return summary.written.length > 0 ? 0 : 1
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err)
    console.error(`error: ${message}`)
    return err instanceof UsageError || err instanceof UnknownBackbone ? 2 : 1
  }
}

process.exitCode = main(process.argv.slice(2))
