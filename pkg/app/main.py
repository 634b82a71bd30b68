import json
import logging
import sys
from pathlib import Path
from typing import Optional, Tuple

import click

from app.config import config_hash, env_defaults, load_config
from app.outputs import OutputWriter, jsonable
from app.run_task import TaskResult, TaskRunner
from app.schemas import TASK_NAMES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _setup_logging(verbose: int, default_level: str):
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, default_level, logging.WARNING)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _config_path(positional: Optional[str], option: Optional[str]) -> Path:
    if positional and option and positional != option:
        raise click.UsageError(f"설정 파일이 두 번 지정되었습니다: {positional}, {option}")
    path = positional or option
    if not path:
        raise click.UsageError("설정 파일이 필요합니다 (CONFIG 또는 --config)")
    return Path(path)


def _execute(task: str, config_path: Path, out: Optional[str], overrides: dict) -> TaskResult:
    """설정 로드, 작업 실행, 출력 작성"""
    env = env_defaults()

    # 1. 설정 로드 및 검증
    config = load_config(config_path, task, overrides)
    digest = config_hash(config)
    logger.info("1. 설정 로드 완료: %s (sha256=%s)", config_path, digest[:12])

    # 2. 출력 위치 (CLI > 설정 > 환경변수)
    out_dir = Path(out or config.output.dir or env.out_dir)
    writer = OutputWriter(out_dir, digest, config.output.formats)
    logger.info("2. 출력 위치: %s (형식 %s)", out_dir, ", ".join(config.output.formats))

    # 3. 작업 실행
    runner = TaskRunner(config, writer, digest, threads=env.threads)
    result = runner.run()
    logger.info("3. 작업 완료: %s, 파일 %d 개", task, len(writer.written))
    for path in writer.written:
        click.echo(str(path))
    return result


def _finish(fn, *args) -> int:
    """예외와 검증 결과를 종료 코드로 변환"""
    try:
        result = fn(*args)
    except click.UsageError:
        raise
    except ValueError as e:
        # pydantic ValidationError 도 ValueError
        click.echo(f"오류: {e}", err=True)
        return EXIT_USAGE
    return EXIT_OK if result.passed else EXIT_FAILED


@click.group()
@click.option("-v", "--verbose", count=True, help="로그 상세도 (-v: INFO, -vv: DEBUG)")
def cli(verbose: int):
    """Kolmogorov 연산자 기본해 계산 및 추정치 검증 도구"""
    _setup_logging(verbose, env_defaults().log_level)


@cli.command()
@click.argument("config", required=False)
@click.option("--config", "config_option", type=str, default=None, help="설정 파일 경로")
@click.option("--out", type=str, default=None, help="출력 디렉터리")
def describe(config: Optional[str], config_option: Optional[str], out: Optional[str]):
    """연산자 요약 (d, m, Q, 동차성, hypoellipticity, 타원성 추정)"""
    path = _config_path(config, config_option)

    def task() -> TaskResult:
        result = _execute("describe", path, out, {})
        click.echo(json.dumps(jsonable(result.payloads[0]), indent=2, sort_keys=True))
        return result

    sys.exit(_finish(task))


@cli.command()
@click.argument("task", type=click.Choice(TASK_NAMES))
@click.argument("config", required=False)
@click.option("--config", "config_option", type=str, default=None, help="설정 파일 경로")
@click.option("--out", type=str, default=None, help="출력 디렉터리")
@click.option("--threads", type=int, default=None, help="최대 작업자 수")
@click.option("--seed", type=int, default=None, help="난수 시드 (sample, scale)")
@click.option("--n", "n", type=int, default=None, help="표본 수 (sample)")
@click.option("--lambda", "lams", type=float, multiple=True, help="스케일 lambda (scale, 반복 가능)")
def run(
        task: str,
        config: Optional[str],
        config_option: Optional[str],
        out: Optional[str],
        threads: Optional[int],
        seed: Optional[int],
        n: Optional[int],
        lams: Tuple[float, ...],
):
    """작업 하나 실행: 종료 코드 0 성공, 1 검증 실패, 2 설정 오류"""
    path = _config_path(config, config_option)
    if threads is not None and threads < 1:
        raise click.BadParameter("1 이상이어야 합니다", param_hint="--threads")
    overrides = {
        "threads": threads,
        "seed": seed,
        "n": n,
        "lams": [float(v) for v in lams] if lams else None,
    }
    sys.exit(_finish(_execute, task, path, out, overrides))


if __name__ == "__main__":
    cli()
