/** Locates and invokes the curvitopo command-line tool. */

import { spawnSync } from "node:child_process";

export class ValidationError extends Error {}
export class ToolkitError extends Error {}

export function cliCommand(): string[] {
  const env = process.env.CURVITOPO_CLI;
  if (env && env.trim().length > 0) {
    return env.trim().split(/\s+/);
  }
  return ["curvitopo"];
}

export interface CliResult {
  stdout: string;
  stderr: string;
}

export function runCli(args: string[]): CliResult {
  const cmd = cliCommand();
  const proc = spawnSync(cmd[0], [...cmd.slice(1), ...args], {
    encoding: "utf8",
    maxBuffer: 1 << 26,
  });
  if (proc.error) {
    throw new ToolkitError(
      `cannot launch ${cmd.join(" ")}: ${proc.error.message} ` +
        "(set CURVITOPO_CLI to the toolkit command)",
    );
  }
  if (proc.status === 2) {
    throw new ValidationError(proc.stderr.trim() || "invalid arguments");
  }
  if (proc.status !== 0) {
    throw new ToolkitError(proc.stderr.trim() || `exit code ${proc.status}`);
  }
  return { stdout: proc.stdout, stderr: proc.stderr };
}
