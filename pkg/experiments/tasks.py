from celery import shared_task

from experiments.models import Run


@shared_task
def process_run(run_id):
    run = Run.objects.get(id=run_id)
    run.process()
    return run.status
